#pragma once

// Slow, direct reference implementations used by the self-check suite.

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "usseg/kernels.hpp"
#include "usseg/metrics.hpp"

namespace usseg::reference {

// Direct summation in double.
template <class T>
Tensor<double> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, const ConvGeom& g) {
  const Shape xs = x.shape(), ws = w.shape();
  const std::size_t Ho = conv_out_size(xs.h, ws.h, g.pad.top, g.pad.bottom, g.stride, g.dilation);
  const std::size_t Wo = conv_out_size(xs.w, ws.w, g.pad.left, g.pad.right, g.stride, g.dilation);
  Tensor<double> y(Shape{xs.n, ws.n, Ho, Wo});
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t o = 0; o < ws.n; ++o)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          double acc = bias ? double((*bias)[o]) : 0.0;
          for (std::size_t c = 0; c < xs.c; ++c)
            for (std::size_t u = 0; u < ws.h; ++u)
              for (std::size_t v = 0; v < ws.w; ++v) {
                const long long yy = (long long)(i * g.stride + u * g.dilation) - (long long)g.pad.top;
                const long long xx = (long long)(j * g.stride + v * g.dilation) - (long long)g.pad.left;
                if (yy < 0 || xx < 0 || yy >= (long long)xs.h || xx >= (long long)xs.w) continue;
                acc += double(x.at(n, c, std::size_t(yy), std::size_t(xx))) * double(w.at(o, c, u, v));
              }
          y.at(n, o, i, j) = acc;
        }
  return y;
}

// Repeatedly takes the best remaining box (score, then lower index) and
// removes everything overlapping it above the threshold.
inline std::vector<std::size_t> nms(const std::vector<Box>& boxes, const std::vector<float>& scores, double thr) {
  std::vector<bool> alive(boxes.size(), true);
  std::vector<std::size_t> keep;
  for (;;) {
    std::size_t best = boxes.size();
    for (std::size_t i = 0; i < boxes.size(); ++i)
      if (alive[i] && (best == boxes.size() || scores[i] > scores[best])) best = i;
    if (best == boxes.size()) return keep;
    keep.push_back(best);
    alive[best] = false;
    for (std::size_t i = 0; i < boxes.size(); ++i)
      if (alive[i] && box_iou(boxes[best], boxes[i]) > thr) alive[i] = false;
  }
}

// AP from the literal definition: at each rank where recall grows, take the
// maximum precision over all ranks with at least that recall.
inline double average_precision(const std::vector<std::pair<float, bool>>& ranked, std::size_t total_gt) {
  if (total_gt == 0) return 0.0;
  std::vector<double> prec, rec;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    tp += ranked[i].second;
    prec.push_back(double(tp) / double(i + 1));
    rec.push_back(double(tp) / double(total_gt));
  }
  double ap = 0, prev = 0;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    if (rec[i] <= prev) continue;
    double pmax = 0;
    for (std::size_t k = 0; k < rec.size(); ++k)
      if (rec[k] >= rec[i]) pmax = std::max(pmax, prec[k]);
    ap += (rec[i] - prev) * pmax;
    prev = rec[i];
  }
  return ap;
}

// Per-class AP at one threshold; nullopt when the class has no GT.
inline std::optional<double> class_ap(const std::map<std::string, std::vector<Detection>>& preds,
                                      const std::vector<GroundTruthImage>& gts, int cls, double thr, IouKind kind) {
  std::vector<const GroundTruthImage*> images;
  for (const auto& g : gts) images.push_back(&g);
  std::sort(images.begin(), images.end(), [](auto* a, auto* b) { return a->id < b->id; });
  std::size_t total = 0;
  std::vector<std::pair<float, bool>> ranked;
  for (const auto* g : images) {
    std::vector<const Instance*> cg;
    for (const auto& inst : g->instances)
      if (inst.label == cls) cg.push_back(&inst);
    total += cg.size();
    std::vector<const Detection*> cd;
    if (auto it = preds.find(g->id); it != preds.end())
      for (const auto& d : it->second)
        if (d.label == cls) cd.push_back(&d);
    // stable selection sort by descending score
    for (std::size_t i = 0; i < cd.size(); ++i)
      for (std::size_t j = cd.size() - 1; j > i; --j)
        if (cd[j]->score > cd[j - 1]->score) std::swap(cd[j], cd[j - 1]);
    std::vector<bool> used(cg.size(), false);
    for (const auto* d : cd) {
      double best = -1;
      std::size_t bi = cg.size();
      for (std::size_t k = 0; k < cg.size(); ++k) {
        if (used[k]) continue;
        const double iou = kind == IouKind::box ? box_iou(d->box, cg[k]->box) : mask_iou(d->mask, cg[k]->mask);
        if (iou > best) {
          best = iou;
          bi = k;
        }
      }
      const bool tp = bi < cg.size() && best >= thr;
      if (tp) used[bi] = true;
      ranked.push_back({d->score, tp});
    }
  }
  if (total == 0) return std::nullopt;
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  return average_precision(ranked, total);
}

// SAG output computed scalar by scalar for a (1, C, H, W) input.
template <class T>
std::vector<double> sag(const Tensor<T>& f, const Tensor<T>& w1, const Tensor<T>& b1, const Tensor<T>& w2,
                        const Tensor<T>& b2, std::vector<double>* weights = nullptr) {
  const Shape s = f.shape();
  const std::size_t C = s.c, Hd = w1.shape().n, HW = s.h * s.w;
  std::vector<double> gap(C, 0.0), gmp(C, -INFINITY);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < HW; ++i) {
      const double v = f.plane(0, c)[i];
      gap[c] += v / double(HW);
      gmp[c] = std::max(gmp[c], v);
    }
  auto theta = [&](const std::vector<double>& v) {
    std::vector<double> h(Hd), o(C);
    for (std::size_t j = 0; j < Hd; ++j) {
      double a = b1[j];
      for (std::size_t c = 0; c < C; ++c) a += double(w1[j * C + c]) * v[c];
      h[j] = std::max(0.0, a);
    }
    for (std::size_t c = 0; c < C; ++c) {
      double a = b2[c];
      for (std::size_t j = 0; j < Hd; ++j) a += double(w2[c * Hd + j]) * h[j];
      o[c] = a;
    }
    return o;
  };
  const auto ta = theta(gap), tm = theta(gmp);
  std::vector<double> out(s.numel());
  std::vector<double> w(C);
  for (std::size_t c = 0; c < C; ++c) {
    w[c] = 1.0 / (1.0 + std::exp(-(ta[c] + tm[c])));
    for (std::size_t i = 0; i < HW; ++i) out[c * HW + i] = double(f.plane(0, c)[i]) * w[c];
  }
  if (weights) *weights = w;
  return out;
}

// Crossing-number point-in-polygon test.
inline bool point_in_polygon(const std::vector<Point>& poly, double x, double y) {
  bool c = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++)
    if ((poly[i].y > y) != (poly[j].y > y) &&
        x < (poly[j].x - poly[i].x) * (y - poly[i].y) / (poly[j].y - poly[i].y) + poly[i].x)
      c = !c;
  return c;
}

}  // namespace usseg::reference
