#pragma once

// Training targets (anchor assignment, RoI sampling) and the multi-task loss.

#include <algorithm>
#include <cmath>
#include <vector>

#include "usseg/detect.hpp"
#include "usseg/losses.hpp"

namespace usseg {

struct SamplingConfig {
  std::size_t rpn_batch = 256;
  double rpn_positive_fraction = 0.5;
  double rpn_positive_iou = 0.7;
  double rpn_negative_iou = 0.3;
  std::size_t roi_batch = 64;
  double roi_positive_fraction = 0.25;
  double roi_positive_iou = 0.5;
};

// Everything the loss needs that does not depend on parameters. Computing it
// once and reusing it keeps the loss a smooth function of the parameters.
template <class T>
struct TrainPlan {
  std::vector<ad::Selection<T>> rpn_objectness;  // per level
  std::vector<ad::Selection<T>> rpn_deltas;      // per level
  std::size_t rpn_sampled = 0;

  std::vector<Box> rois;
  std::vector<int> roi_labels;       // 0 = background
  ad::Selection<T> box_targets;      // flat into (R, 20)
  std::size_t positive_rois = 0;     // rois[0 .. positive_rois) are foreground
  ad::Selection<T> mask_targets;     // flat into (P, 4, 28, 28)

  std::vector<Box> positive_boxes() const { return {rois.begin(), rois.begin() + std::ptrdiff_t(positive_rois)}; }
};

namespace detail {

// Random subset of size k (order preserved by ascending index).
inline std::vector<std::size_t> sample_subset(std::vector<std::size_t> pool, std::size_t k, Rng& rng) {
  if (pool.size() > k) {
    for (std::size_t i = 0; i < k; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.next_u64() % (pool.size() - i));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
  }
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace detail

// Anchor labels: 1 positive, 0 negative, -1 ignored. An anchor is positive at
// IoU >= positive_iou with any GT or when it attains a GT's best IoU;
// negative when its best IoU is below negative_iou.
inline std::vector<int> label_anchors(const std::vector<Box>& anchors, const std::vector<Instance>& gts,
                                      const SamplingConfig& cfg, std::vector<std::size_t>& matched) {
  const std::size_t n = anchors.size();
  std::vector<int> labels(n, -1);
  matched.assign(n, 0);
  std::vector<double> best(n, 0.0);
  std::vector<double> gt_best(gts.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double iou = box_iou(anchors[i], gts[g].box);
      if (iou > best[i]) {
        best[i] = iou;
        matched[i] = g;
      }
      gt_best[g] = std::max(gt_best[g], iou);
    }
  for (std::size_t i = 0; i < n; ++i) {
    if (best[i] < cfg.rpn_negative_iou) labels[i] = 0;
    if (best[i] >= cfg.rpn_positive_iou) labels[i] = 1;
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (gt_best[g] <= 0.0) continue;
    for (std::size_t i = 0; i < n; ++i)
      if (box_iou(anchors[i], gts[g].box) == gt_best[g]) {
        labels[i] = 1;
        matched[i] = g;
      }
  }
  return labels;
}

// Target crop of a GT mask over a box, sampled at kMaskSize^2 bin centers.
inline std::vector<std::uint8_t> crop_mask_target(const BinaryMask& mask, const Box& box) {
  std::vector<std::uint8_t> out(kMaskSize * kMaskSize, 0);
  const double bw = double(box.width()) / kMaskSize, bh = double(box.height()) / kMaskSize;
  for (std::size_t i = 0; i < kMaskSize; ++i) {
    const double y = double(box.y1) + (double(i) + 0.5) * bh;
    if (y < 0 || y >= double(mask.height)) continue;
    for (std::size_t j = 0; j < kMaskSize; ++j) {
      const double x = double(box.x1) + (double(j) + 0.5) * bw;
      if (x < 0 || x >= double(mask.width)) continue;
      out[i * kMaskSize + j] = mask.at(std::size_t(y), std::size_t(x));
    }
  }
  return out;
}

template <class T>
void plan_rpn(TrainPlan<T>& plan, const std::vector<std::vector<Box>>& anchors, std::size_t anchors_per_cell,
              const std::vector<Instance>& gts, const SamplingConfig& cfg, Rng& rng) {
  std::vector<Box> all;
  std::vector<std::pair<std::size_t, std::size_t>> where;  // (level, index)
  for (std::size_t l = 0; l < anchors.size(); ++l)
    for (std::size_t i = 0; i < anchors[l].size(); ++i) {
      all.push_back(anchors[l][i]);
      where.emplace_back(l, i);
    }
  std::vector<std::size_t> matched;
  const auto labels = label_anchors(all, gts, cfg, matched);
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) pos.push_back(i);
    if (labels[i] == 0) neg.push_back(i);
  }
  pos = detail::sample_subset(pos, static_cast<std::size_t>(double(cfg.rpn_batch) * cfg.rpn_positive_fraction), rng);
  neg = detail::sample_subset(neg, cfg.rpn_batch - pos.size(), rng);

  plan.rpn_objectness.assign(anchors.size(), {});
  plan.rpn_deltas.assign(anchors.size(), {});
  const BoxCoder coder;
  auto plane_of = [&](std::size_t l) { return anchors[l].size() / anchors_per_cell; };
  for (std::size_t i : pos) {
    const auto [l, k] = where[i];
    plan.rpn_objectness[l].push(objectness_index(k, anchors_per_cell, plane_of(l)), T(1));
    const Deltas d = coder.encode(all[i], gts[matched[i]].box);
    for (std::size_t j = 0; j < 4; ++j) plan.rpn_deltas[l].push(delta_index(k, j, anchors_per_cell, plane_of(l)), T(d[j]));
  }
  for (std::size_t i : neg) {
    const auto [l, k] = where[i];
    plan.rpn_objectness[l].push(objectness_index(k, anchors_per_cell, plane_of(l)), T(0));
  }
  plan.rpn_sampled = pos.size() + neg.size();
}

// RoIs are proposals plus the GT boxes; positives come first in the plan.
template <class T>
void plan_heads(TrainPlan<T>& plan, const std::vector<Proposal>& proposals, const std::vector<Instance>& gts,
                const SamplingConfig& cfg, Rng& rng) {
  plan.rois.clear();
  plan.roi_labels.clear();
  plan.box_targets = {};
  plan.mask_targets = {};
  plan.positive_rois = 0;
  if (gts.empty()) return;
  std::vector<Box> cand;
  for (const auto& p : proposals) cand.push_back(p.box);
  for (const auto& g : gts) cand.push_back(g.box);
  std::vector<std::size_t> pos, neg, matched(cand.size(), 0);
  for (std::size_t i = 0; i < cand.size(); ++i) {
    if (!cand[i].valid()) continue;
    double best = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double iou = box_iou(cand[i], gts[g].box);
      if (iou > best) {
        best = iou;
        matched[i] = g;
      }
    }
    (best >= cfg.roi_positive_iou ? pos : neg).push_back(i);
  }
  pos = detail::sample_subset(pos, static_cast<std::size_t>(double(cfg.roi_batch) * cfg.roi_positive_fraction), rng);
  neg = detail::sample_subset(neg, cfg.roi_batch - pos.size(), rng);

  const BoxCoder coder = head_box_coder();
  for (std::size_t i : pos) {
    const Instance& g = gts[matched[i]];
    const std::size_t r = plan.rois.size();
    plan.rois.push_back(cand[i]);
    plan.roi_labels.push_back(g.label);
    const Deltas d = coder.encode(cand[i], g.box);
    for (std::size_t j = 0; j < 4; ++j) plan.box_targets.push(r * 4 * (kNumClasses + 1) + 4 * std::size_t(g.label) + j, T(d[j]));
    const auto crop = crop_mask_target(g.mask, cand[i]);
    const std::size_t base = (r * kNumClasses + std::size_t(g.label - 1)) * kMaskSize * kMaskSize;
    for (std::size_t k = 0; k < crop.size(); ++k) plan.mask_targets.push(base + k, T(crop[k]));
  }
  plan.positive_rois = pos.size();
  for (std::size_t i : neg) {
    plan.rois.push_back(cand[i]);
    plan.roi_labels.push_back(0);
  }
}

template <class T>
struct HeadOutputs {
  Var class_logits;  // undefined when the plan has no RoIs
  Var box_deltas;
  Var mask_logits;   // undefined when the plan has no positive RoIs
};

struct LossValues {
  double rpn_objectness = 0, rpn_box = 0, cls = 0, box = 0, mask = 0, total = 0;
};

template <class T>
struct LossBreakdown {
  Var rpn_objectness, rpn_box, cls, box, mask, total;

  LossValues values(const Tape<T>& tape) const {
    auto v = [&](Var x) { return static_cast<double>(tape.value(x)[0]); };
    return {v(rpn_objectness), v(rpn_box), v(cls), v(box), v(mask), v(total)};
  }
};

// Unweighted sum of RPN objectness BCE, RPN smooth-L1, head cross-entropy,
// head smooth-L1 on the matched class, and mask BCE on the matched class.
template <class T>
LossBreakdown<T> compute_losses(Tape<T>& tape, const std::vector<RpnLevel>& rpn, const HeadOutputs<T>& heads,
                                const TrainPlan<T>& plan) {
  auto zero = [&]() { return ad::constant(tape, Tensor<T>({1, 1, 1, 1})); };
  const T rpn_norm = T(std::max<std::size_t>(1, plan.rpn_sampled));
  std::vector<Var> obj_terms, box_terms;
  for (std::size_t l = 0; l < rpn.size(); ++l) {
    obj_terms.push_back(ad::bce_with_logits(tape, rpn[l].objectness, plan.rpn_objectness[l], rpn_norm));
    box_terms.push_back(ad::smooth_l1(tape, rpn[l].deltas, plan.rpn_deltas[l], rpn_norm));
  }
  LossBreakdown<T> out;
  out.rpn_objectness = obj_terms.empty() ? zero() : ad::add_n(tape, obj_terms);
  out.rpn_box = box_terms.empty() ? zero() : ad::add_n(tape, box_terms);
  if (plan.rois.empty()) {
    out.cls = zero();
    out.box = zero();
  } else {
    const T roi_norm = T(plan.rois.size());
    out.cls = ad::softmax_cross_entropy(tape, heads.class_logits, plan.roi_labels, roi_norm);
    out.box = ad::smooth_l1(tape, heads.box_deltas, plan.box_targets, roi_norm);
  }
  if (plan.positive_rois == 0) {
    out.mask = zero();
  } else {
    out.mask = ad::bce_with_logits(tape, heads.mask_logits, plan.mask_targets,
                                   T(plan.positive_rois * kMaskSize * kMaskSize));
  }
  out.total = ad::add_n(tape, {out.rpn_objectness, out.rpn_box, out.cls, out.box, out.mask});
  return out;
}

}  // namespace usseg
