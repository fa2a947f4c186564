#pragma once

// IoU matching and all-point-interpolated average precision.

#include <algorithm>
#include <array>
#include <cstdio>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "usseg/fault.hpp"
#include "usseg/types.hpp"

namespace usseg {

enum class IouKind { box, mask };

inline std::string to_string(IouKind k) { return k == IouKind::box ? "box" : "mask"; }

inline double instance_iou(const Detection& d, const Instance& g, IouKind kind) {
  return kind == IouKind::box ? box_iou(d.box, g.box) : mask_iou(d.mask, g.mask);
}

// IoU thresholds 0.50:0.05:0.95.
inline constexpr std::size_t kNumThresholds = 10;
inline double iou_threshold(std::size_t k) { return double(50 + 5 * k) / 100.0; }

// Greedy matching within one image. Detections are visited by descending
// score (stable); each takes the highest-IoU unmatched GT of its class when
// that IoU reaches the threshold. Flags are returned in input order.
inline std::vector<bool> match_detections(const std::vector<Detection>& dets, const std::vector<Instance>& gts,
                                          double threshold, IouKind kind) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<bool> taken(gts.size(), false), tp(dets.size(), false);
  for (std::size_t i : order) {
    double best = -1.0;
    std::size_t best_g = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].label != dets[i].label) continue;
      const double iou = instance_iou(dets[i], gts[g], kind);
      if (iou > best) {
        best = iou;
        best_g = g;
      }
    }
    if (best_g < gts.size() && best >= threshold) {
      taken[best_g] = true;
      tp[i] = true;
    }
  }
  return tp;
}

struct ScoredFlag {
  float score = 0;
  bool tp = false;
};

// Area under the precision/recall curve with all-point interpolation:
// sum over recall steps of (r_i - r_{i-1}) * max precision at recall >= r_i.
// No GT yields 0.
inline double average_precision(std::vector<ScoredFlag> flags, std::size_t total_gt) {
  if (total_gt == 0) return 0.0;
  std::stable_sort(flags.begin(), flags.end(), [](const ScoredFlag& a, const ScoredFlag& b) { return a.score > b.score; });
  const std::size_t n = flags.size();
  // Recall only ever rises in steps of 1/total_gt, so the area is the sum of
  // the enveloped precisions at each hit over total_gt. Summing in extended
  // precision and dividing once keeps hand examples like 5/6 correctly rounded.
  std::vector<long double> precision(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += flags[i].tp;
    precision[i] = static_cast<long double>(tp) / static_cast<long double>(i + 1);
  }
  if (!fault_active(Fault::ap_interp))
    for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  long double sum = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (flags[i].tp) sum += precision[i];
  return static_cast<double>(sum / static_cast<long double>(total_gt));
}

struct GroundTruthImage {
  std::string id;
  std::vector<Instance> instances;
};

// Per-class AP at the ten thresholds; nullopt marks a class without GT.
struct APReport {
  IouKind task = IouKind::box;
  std::array<std::optional<std::array<double, kNumThresholds>>, kNumClasses> per_class{};

  bool present(int label) const { return per_class[std::size_t(label - 1)].has_value(); }

  double at(int label, std::size_t k) const { return (*per_class[std::size_t(label - 1)])[k]; }

  // Mean over the ten thresholds.
  double mean_ap(int label) const {
    const auto& v = *per_class[std::size_t(label - 1)];
    return std::accumulate(v.begin(), v.end(), 0.0) / double(kNumThresholds);
  }

  // Class means over classes with at least one GT; nullopt when none has.
  std::optional<double> class_mean_at(std::size_t k) const {
    double s = 0;
    int n = 0;
    for (int c = 1; c <= kNumClasses; ++c)
      if (present(c)) {
        s += at(c, k);
        ++n;
      }
    return n ? std::optional<double>(s / n) : std::nullopt;
  }
  std::optional<double> class_mean_ap() const {
    double s = 0;
    int n = 0;
    for (int c = 1; c <= kNumClasses; ++c)
      if (present(c)) {
        s += mean_ap(c);
        ++n;
      }
    return n ? std::optional<double>(s / n) : std::nullopt;
  }
};

// Per-class AP of one task over a corpus. Images are reduced in ascending id
// order so the result does not depend on input order.
inline APReport evaluate_task(const std::map<std::string, std::vector<Detection>>& predictions,
                              const std::vector<GroundTruthImage>& gts, IouKind kind) {
  std::map<std::string, const GroundTruthImage*> by_id;
  for (const auto& g : gts) by_id[g.id] = &g;
  for (const auto& [id, _] : predictions)
    if (!by_id.count(id)) throw DataError("predictions reference unknown image id '" + id + "'");
  static const std::vector<Detection> kNone;

  APReport report;
  report.task = kind;
  for (int c = 1; c <= kNumClasses; ++c) {
    std::size_t total_gt = 0;
    for (const auto& [id, g] : by_id)
      for (const auto& inst : g->instances) total_gt += inst.label == c;
    if (total_gt == 0) continue;
    std::array<double, kNumThresholds> aps{};
    for (std::size_t k = 0; k < kNumThresholds; ++k) {
      std::vector<ScoredFlag> flags;
      for (const auto& [id, g] : by_id) {
        auto it = predictions.find(id);
        const auto& all = it == predictions.end() ? kNone : it->second;
        std::vector<Detection> dets;
        for (const auto& d : all)
          if (d.label == c) dets.push_back(d);
        std::vector<Instance> cls_gts;
        for (const auto& inst : g->instances)
          if (inst.label == c) cls_gts.push_back(inst);
        const auto tp = match_detections(dets, cls_gts, iou_threshold(k), kind);
        std::vector<std::size_t> order(dets.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
        for (std::size_t i : order) flags.push_back({dets[i].score, tp[i]});
      }
      aps[k] = average_precision(std::move(flags), total_gt);
    }
    report.per_class[std::size_t(c - 1)] = aps;
  }
  return report;
}

struct EvaluationResult {
  APReport box;
  APReport mask;
};

inline EvaluationResult evaluate(const std::map<std::string, std::vector<Detection>>& predictions,
                                 const std::vector<GroundTruthImage>& gts) {
  return {evaluate_task(predictions, gts, IouKind::box), evaluate_task(predictions, gts, IouKind::mask)};
}

// Human table: rows per class plus the class mean, AP50/AP60/AP70/AP x100.
inline std::string format_table(const APReport& r, const std::string& title = "") {
  std::ostringstream os;
  os << (title.empty() ? to_string(r.task) : title) << "\n";
  os << std::left << std::setw(8) << "class" << std::right << std::setw(8) << "AP50" << std::setw(8) << "AP60"
     << std::setw(8) << "AP70" << std::setw(8) << "AP" << "\n";
  auto cell = [&](std::optional<double> v) {
    if (!v) return std::string("  absent");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%8.2f", *v * 100.0);
    return std::string(buf);
  };
  for (int c = 1; c <= kNumClasses; ++c) {
    os << std::left << std::setw(8) << class_name(c) << std::right;
    if (!r.present(c)) {
      os << "  absent  absent  absent  absent\n";
      continue;
    }
    os << cell(r.at(c, 0)) << cell(r.at(c, 2)) << cell(r.at(c, 4)) << cell(r.mean_ap(c)) << "\n";
  }
  os << std::left << std::setw(8) << "mean" << std::right << cell(r.class_mean_at(0)) << cell(r.class_mean_at(2))
     << cell(r.class_mean_at(4)) << cell(r.class_mean_ap()) << "\n";
  return os.str();
}

// Machine-readable lines `task.class.threshold=value` (4 decimals, fraction
// of 1). Threshold tokens are 0.50 .. 0.95 and `AP` for the threshold mean;
// class `mean` is the class average. Classes without GT print `absent`.
inline std::string format_key_values(const APReport& r) {
  std::ostringstream os;
  const std::string task = to_string(r.task);
  auto val = [](std::optional<double> v) {
    if (!v) return std::string("absent");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", *v);
    return std::string(buf);
  };
  auto thr = [](std::size_t k) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.2f", iou_threshold(k));
    return std::string(buf);
  };
  for (int c = 1; c <= kNumClasses; ++c) {
    const std::string prefix = task + "." + std::string(class_name(c)) + ".";
    for (std::size_t k = 0; k < kNumThresholds; ++k)
      os << prefix << thr(k) << "=" << val(r.present(c) ? std::optional<double>(r.at(c, k)) : std::nullopt) << "\n";
    os << prefix << "AP=" << val(r.present(c) ? std::optional<double>(r.mean_ap(c)) : std::nullopt) << "\n";
  }
  for (std::size_t k = 0; k < kNumThresholds; ++k) os << task << ".mean." << thr(k) << "=" << val(r.class_mean_at(k)) << "\n";
  os << task << ".mean.AP=" << val(r.class_mean_ap()) << "\n";
  return os.str();
}

}  // namespace usseg
