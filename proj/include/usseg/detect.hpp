#pragma once

// Region proposal network, box/mask heads, and proposal selection.

#include <algorithm>
#include <array>
#include <numeric>
#include <string>
#include <vector>

#include "usseg/boxes.hpp"
#include "usseg/ops.hpp"
#include "usseg/params.hpp"
#include "usseg/types.hpp"

namespace usseg {

inline constexpr std::size_t kBoxPool = 7;
inline constexpr std::size_t kMaskPool = 14;
inline constexpr std::size_t kMaskSize = 28;
inline constexpr std::array<std::size_t, 4> kLevelStrides{4, 8, 16, 32};

// Head-side regression weights; the RPN uses unit weights.
inline BoxCoder head_box_coder() { return BoxCoder{{10, 10, 5, 5}}; }

struct HeadConfig {
  std::size_t width = 128;  // pyramid width shared by all RPN levels
  std::array<float, 4> anchor_sizes{32, 64, 128, 256};
  std::vector<float> ratios{kDefaultRatios.begin(), kDefaultRatios.end()};
  std::size_t fc_width = 256;

  std::size_t anchors_per_cell() const { return ratios.size(); }
};

template <class T>
void add_head_params(ParamStore<T>& store, const HeadConfig& cfg, Rng& rng) {
  const std::size_t w = cfg.width, A = cfg.anchors_per_cell(), K = kNumClasses + 1;
  add_conv(store, "rpn.conv", w, w, 3, rng);
  store.add("rpn.obj.w", init::normal<T>({A, w, 1, 1}, 0.01, rng));
  store.add("rpn.obj.b", Tensor<T>({1, A, 1, 1}));
  store.add("rpn.delta.w", init::normal<T>({4 * A, w, 1, 1}, 0.01, rng));
  store.add("rpn.delta.b", Tensor<T>({1, 4 * A, 1, 1}));

  store.add("box.fc.w", init::he_normal<T>({cfg.fc_width, w * kBoxPool * kBoxPool, 1, 1}, rng));
  store.add("box.fc.b", Tensor<T>({1, cfg.fc_width, 1, 1}));
  store.add("box.cls.w", init::normal<T>({K, cfg.fc_width, 1, 1}, 0.01, rng));
  store.add("box.cls.b", Tensor<T>({1, K, 1, 1}));
  store.add("box.delta.w", init::normal<T>({4 * K, cfg.fc_width, 1, 1}, 0.001, rng));
  store.add("box.delta.b", Tensor<T>({1, 4 * K, 1, 1}));

  add_conv(store, "mask.conv1", w, w, 3, rng);
  add_conv(store, "mask.conv2", w, w, 3, rng);
  store.add("mask.up.w", init::normal<T>({w, w, 2, 2}, std::sqrt(2.0 / double(w)), rng));
  store.add("mask.up.b", Tensor<T>({1, w, 1, 1}));
  add_conv(store, "mask.logits", kNumClasses, w, 1, rng);
}

struct RpnLevel {
  Var objectness;  // (1, A, H, W) logits
  Var deltas;      // (1, 4A, H, W)
  std::size_t stride = 0;
};

// Shared 3x3 conv + ReLU, then sibling 1x1 convs, on every level.
template <class T>
std::vector<RpnLevel> rpn_forward(const Bound<T>& p, const std::vector<Var>& levels) {
  Tape<T>& tape = p.tape();
  const std::size_t width = tape.shape(p["rpn.conv.w"]).c;
  std::vector<RpnLevel> out;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    if (tape.shape(levels[l]).c != width)
      throw ShapeError("RPN expects width " + std::to_string(width) + " at level " + std::to_string(l) + ", got " +
                       tape.shape(levels[l]).str());
    Var h = ad::relu(tape, ad::conv2d(tape, levels[l], p["rpn.conv.w"], p["rpn.conv.b"], {1, 1, Padding::same(3, 3)}));
    out.push_back({ad::conv2d(tape, h, p["rpn.obj.w"], p["rpn.obj.b"], {}),
                   ad::conv2d(tape, h, p["rpn.delta.w"], p["rpn.delta.b"], {}), kLevelStrides[l]});
  }
  return out;
}

// Anchor i = (y * W + x) * A + a lives at these flat offsets of the level outputs.
inline std::size_t objectness_index(std::size_t i, std::size_t A, std::size_t plane) {
  return (i % A) * plane + i / A;
}
inline std::size_t delta_index(std::size_t i, std::size_t j, std::size_t A, std::size_t plane) {
  return (4 * (i % A) + j) * plane + i / A;
}

inline std::vector<AnchorLevel> anchor_levels(const HeadConfig& cfg, std::size_t image_h, std::size_t image_w) {
  std::vector<AnchorLevel> out;
  for (std::size_t l = 0; l < 4; ++l)
    out.push_back({image_h / kLevelStrides[l], image_w / kLevelStrides[l], kLevelStrides[l], cfg.anchor_sizes[l]});
  return out;
}

struct Proposal {
  Box box;
  float score = 0;
  std::size_t level = 0;
};

struct ProposalConfig {
  std::size_t pre_nms_topk = 1000;  // per level
  std::size_t post_nms_topk = 100;
  double nms_threshold = 0.7;
  float min_size = 1.0f;
};

// Top-scoring decoded anchors after NMS, best first.
template <class T>
std::vector<Proposal> select_proposals(const Tape<T>& tape, const std::vector<RpnLevel>& rpn,
                                       const std::vector<std::vector<Box>>& anchors, std::size_t image_h,
                                       std::size_t image_w, const ProposalConfig& cfg) {
  std::vector<Proposal> cand;
  const BoxCoder coder;
  for (std::size_t l = 0; l < rpn.size(); ++l) {
    const Tensor<T>& obj = tape.value(rpn[l].objectness);
    const Tensor<T>& del = tape.value(rpn[l].deltas);
    const std::size_t A = obj.shape().c, plane = obj.shape().plane();
    const std::size_t n = anchors[l].size();
    if (n != A * plane) throw ShapeError("anchor count does not match RPN outputs at level " + std::to_string(l));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto logit = [&](std::size_t i) { return obj[objectness_index(i, A, plane)]; };
    const std::size_t k = std::min(cfg.pre_nms_topk, n);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) { return logit(a) > logit(b) || (logit(a) == logit(b) && a < b); });
    for (std::size_t r = 0; r < k; ++r) {
      const std::size_t i = order[r];
      Deltas d{};
      for (std::size_t j = 0; j < 4; ++j) d[j] = static_cast<float>(del[delta_index(i, j, A, plane)]);
      const Box b = clip_box(coder.decode(anchors[l][i], d), float(image_w), float(image_h));
      if (b.width() < cfg.min_size || b.height() < cfg.min_size) continue;
      cand.push_back({b, static_cast<float>(ad::sigmoid_scalar(logit(i))), l});
    }
  }
  std::vector<Box> boxes;
  std::vector<float> scores;
  for (const auto& c : cand) {
    boxes.push_back(c.box);
    scores.push_back(c.score);
  }
  const auto keep = nms(boxes, scores, cfg.nms_threshold);
  std::vector<Proposal> out;
  for (std::size_t i = 0; i < keep.size() && out.size() < cfg.post_nms_topk; ++i) out.push_back(cand[keep[i]]);
  return out;
}

struct BoxHeadOutput {
  Var class_logits;  // (R, 5, 1, 1)
  Var box_deltas;    // (R, 20, 1, 1)
};

template <class T>
BoxHeadOutput box_head_forward(const Bound<T>& p, Var feature, std::size_t stride, std::vector<Box> rois) {
  Tape<T>& tape = p.tape();
  Var pooled = ad::roi_align(tape, feature, std::move(rois), kBoxPool, 1.0 / double(stride));
  Var h = ad::relu(tape, ad::dense(tape, ad::flatten(tape, pooled), p["box.fc.w"], p["box.fc.b"]));
  return {ad::dense(tape, h, p["box.cls.w"], p["box.cls.b"]), ad::dense(tape, h, p["box.delta.w"], p["box.delta.b"])};
}

// Per-class 28x28 mask logits, (R, 4, 28, 28).
template <class T>
Var mask_head_forward(const Bound<T>& p, Var feature, std::size_t stride, std::vector<Box> rois) {
  Tape<T>& tape = p.tape();
  const ConvGeom same{1, 1, Padding::same(3, 3)};
  Var x = ad::roi_align(tape, feature, std::move(rois), kMaskPool, 1.0 / double(stride));
  x = ad::relu(tape, ad::conv2d(tape, x, p["mask.conv1.w"], p["mask.conv1.b"], same));
  x = ad::relu(tape, ad::conv2d(tape, x, p["mask.conv2.w"], p["mask.conv2.b"], same));
  x = ad::relu(tape, ad::conv_transpose2d(tape, x, p["mask.up.w"], p["mask.up.b"], 2, 0));
  return ad::conv2d(tape, x, p["mask.logits.w"], p["mask.logits.b"], {});
}

inline std::uint64_t rpn_conv_macs(const HeadConfig& cfg, std::size_t h2, std::size_t w2) {
  const std::uint64_t w = cfg.width, A = cfg.anchors_per_cell();
  std::uint64_t macs = 0;
  for (std::size_t l = 0; l < 4; ++l) {
    const std::uint64_t cells = std::uint64_t(h2 >> l) * (w2 >> l);
    macs += cells * (w * w * 9 + w * A + w * 4 * A);
  }
  return macs;
}

// Head cost for a given number of RoIs (box head) and mask RoIs.
inline std::uint64_t head_dense_macs(const HeadConfig& cfg, std::size_t rois) {
  const std::uint64_t K = kNumClasses + 1;
  return std::uint64_t(rois) * (cfg.width * kBoxPool * kBoxPool * cfg.fc_width + cfg.fc_width * 5 * K);
}
inline std::uint64_t mask_conv_macs(const HeadConfig& cfg, std::size_t rois) {
  const std::uint64_t w = cfg.width;
  const std::uint64_t per = kMaskPool * kMaskPool * w * w * 9 * 2 + kMaskPool * kMaskPool * w * w * 4 +
                            kMaskSize * kMaskSize * w * kNumClasses;
  return per * rois;
}

}  // namespace usseg
