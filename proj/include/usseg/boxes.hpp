#pragma once

// Anchors, box parameterization, and non-maximum suppression.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "usseg/errors.hpp"
#include "usseg/fault.hpp"
#include "usseg/geometry.hpp"

namespace usseg {

struct AnchorLevel {
  std::size_t height = 0, width = 0;  // feature cells
  std::size_t stride = 0;
  float base_size = 0;
};

inline constexpr std::array<float, 3> kDefaultRatios{0.5f, 1.0f, 2.0f};

// One anchor per (cell, ratio), ordered by row, then column, then ratio.
// ratio = height / width; area stays base_size^2. Centers at (cell + 0.5) * stride.
inline std::vector<Box> level_anchors(const AnchorLevel& lv, std::span<const float> ratios) {
  std::vector<Box> out;
  out.reserve(lv.height * lv.width * ratios.size());
  for (std::size_t y = 0; y < lv.height; ++y)
    for (std::size_t x = 0; x < lv.width; ++x) {
      const double cx = (double(x) + 0.5) * double(lv.stride), cy = (double(y) + 0.5) * double(lv.stride);
      for (float r : ratios) {
        const double w = double(lv.base_size) / std::sqrt(double(r));
        const double h = double(lv.base_size) * std::sqrt(double(r));
        out.push_back(Box{float(cx - w / 2), float(cy - h / 2), float(cx + w / 2), float(cy + h / 2)});
      }
    }
  return out;
}

inline std::vector<std::vector<Box>> generate_anchors(std::span<const AnchorLevel> levels,
                                                      std::span<const float> ratios = kDefaultRatios) {
  std::vector<std::vector<Box>> out;
  for (const auto& lv : levels) out.push_back(level_anchors(lv, ratios));
  return out;
}

using Deltas = std::array<float, 4>;

// Center/size parameterization with log-scale dims:
// (dx, dy, dw, dh) = (wx (gx - ax) / aw, wy (gy - ay) / ah, ww log(gw / aw), wh log(gh / ah)).
struct BoxCoder {
  std::array<double, 4> weights{1, 1, 1, 1};
  double max_log_scale = std::log(1000.0 / 16.0);

  Deltas encode(const Box& anchor, const Box& gt) const {
    check(anchor);
    check(gt);
    const double aw = anchor.width(), ah = anchor.height();
    const double ax = anchor.x1 + 0.5 * aw, ay = anchor.y1 + 0.5 * ah;
    const double gw = gt.width(), gh = gt.height();
    const double gx = gt.x1 + 0.5 * gw, gy = gt.y1 + 0.5 * gh;
    return {float(weights[0] * (gx - ax) / aw), float(weights[1] * (gy - ay) / ah),
            float(weights[2] * std::log(gw / aw)), float(weights[3] * std::log(gh / ah))};
  }

  Box decode(const Box& anchor, const Deltas& d) const {
    check(anchor);
    const double aw = anchor.width(), ah = anchor.height();
    const double ax = anchor.x1 + 0.5 * aw, ay = anchor.y1 + 0.5 * ah;
    const double dx = d[0] / weights[0], dy = d[1] / weights[1];
    const double dw = std::min(double(d[2]) / weights[2], max_log_scale);
    const double dh = std::min(double(d[3]) / weights[3], max_log_scale);
    const double cx = ax + dx * aw, cy = ay + dy * ah;
    const double w = aw * std::exp(dw), h = ah * std::exp(dh);
    return Box{float(cx - 0.5 * w), float(cy - 0.5 * h), float(cx + 0.5 * w), float(cy + 0.5 * h)};
  }

  static void check(const Box& b) {
    if (!(b.width() > 0) || !(b.height() > 0)) throw ArgumentError("box coder on a zero-area box");
  }
};

inline std::vector<Deltas> encode_boxes(std::span<const Box> anchors, std::span<const Box> gt,
                                        const BoxCoder& coder = {}) {
  if (anchors.size() != gt.size()) throw ArgumentError("encode_boxes length mismatch");
  std::vector<Deltas> out(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) out[i] = coder.encode(anchors[i], gt[i]);
  return out;
}

// Decodes and clips to [0, image_w] x [0, image_h].
inline std::vector<Box> decode_boxes(std::span<const Box> anchors, std::span<const Deltas> deltas, float image_w,
                                     float image_h, const BoxCoder& coder = {}) {
  if (anchors.size() != deltas.size()) throw ArgumentError("decode_boxes length mismatch");
  std::vector<Box> out(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) out[i] = clip_box(coder.decode(anchors[i], deltas[i]), image_w, image_h);
  return out;
}

// Greedy NMS: visit boxes by descending score (ties by lower index) and drop
// any box whose IoU with an already kept box exceeds the threshold.
inline std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const float> scores, double iou_threshold) {
  if (boxes.size() != scores.size()) throw ArgumentError("nms: boxes and scores differ in length");
  if (iou_threshold < 0.0 || iou_threshold > 1.0) throw ArgumentError("nms: threshold outside [0, 1]");
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (fault_active(Fault::nms_order))
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  else
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> keep;
  for (std::size_t i : order) {
    bool suppressed = false;
    for (std::size_t k : keep)
      if (box_iou(boxes[i], boxes[k]) > iou_threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) keep.push_back(i);
  }
  return keep;
}

}  // namespace usseg
