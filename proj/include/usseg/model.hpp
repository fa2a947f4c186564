#pragma once

// Full network assembly: backbone -> pyramid -> SLCF -> SAG -> RPN -> heads.

#include <algorithm>
#include <cmath>
#include <vector>

#include "usseg/backbone.hpp"
#include "usseg/contrast_attention.hpp"
#include "usseg/detect.hpp"
#include "usseg/pyramid.hpp"
#include "usseg/targets.hpp"
#include "usseg/types.hpp"

namespace usseg {

struct ModelConfig {
  std::size_t width_divisor = 1;
  PyramidMode pyramid_mode = PyramidMode::skip_concat;
  SkipTarget skip_target = SkipTarget::P3;
  bool use_slcf = true;
  bool use_sag = true;
  bool slcf_shared_kernel = true;
  std::array<float, 4> anchor_sizes{32, 64, 128, 256};
  std::size_t fc_width = 256;

  ProposalConfig train_proposals{1000, 200, 0.7, 1.0f};
  ProposalConfig eval_proposals{1000, 100, 0.7, 1.0f};
  SamplingConfig sampling{};

  double score_threshold = 0.05;
  double nms_threshold = 0.5;
  double mask_threshold = 0.5;
  std::size_t max_detections = 100;

  BackboneConfig backbone() const {
    BackboneConfig b;
    b.width_divisor = width_divisor;
    return b;
  }
  PyramidConfig pyramid() const { return pyramid_config_for(backbone(), width_divisor, pyramid_mode, skip_target); }
  std::size_t width() const { return pyramid().width; }
  SlcfConfig slcf() const { return slcf_config_for(width_divisor, slcf_shared_kernel); }
  SagConfig sag() const { return sag_config_for(use_slcf ? slcf().output_channels() : width()); }
  HeadConfig head() const {
    HeadConfig h;
    h.width = width();
    h.anchor_sizes = anchor_sizes;
    h.fc_width = fc_width;
    return h;
  }
};

template <class T>
ParamStore<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  ParamStore<T> store;
  Rng rng(seed);
  add_backbone_params(store, cfg.backbone(), rng);
  add_pyramid_params(store, cfg.pyramid(), rng);
  if (cfg.use_slcf) add_slcf_params(store, cfg.slcf(), rng);
  if (cfg.use_sag) add_sag_params(store, cfg.sag(), rng);
  if (cfg.use_slcf) add_conv(store, "refine.reduce", cfg.width(), cfg.slcf().output_channels(), 1, rng);
  add_head_params(store, cfg.head(), rng);
  return store;
}

struct ModelOutputs {
  FeatureLevels features;
  PyramidOutput pyramid;
  Var refined;  // P2 after SLCF/SAG, back at pyramid width
  std::vector<RpnLevel> rpn;
};

template <class T>
Var refine_p2(const Bound<T>& p, const ModelConfig& cfg, Var p2) {
  Tape<T>& tape = p.tape();
  Var x = p2;
  if (cfg.use_slcf) x = slcf_forward(p, cfg.slcf(), x);
  if (cfg.use_sag) x = sag_forward(p, cfg.sag(), x);
  if (cfg.use_slcf) x = ad::conv2d(tape, x, p["refine.reduce.w"], p["refine.reduce.b"], {});
  return x;
}

template <class T>
ModelOutputs model_forward(const Bound<T>& p, const ModelConfig& cfg, Var image) {
  ModelOutputs out;
  out.features = backbone_forward(p, cfg.backbone(), image);
  out.pyramid = pyramid_forward(p, cfg.pyramid(), out.features);
  out.refined = refine_p2(p, cfg, out.pyramid.p2);
  out.rpn = rpn_forward(p, {out.refined, out.pyramid.p3, out.pyramid.p4, out.pyramid.p5});
  return out;
}

inline std::vector<std::vector<Box>> model_anchors(const ModelConfig& cfg, std::size_t H, std::size_t W) {
  const HeadConfig head = cfg.head();
  const auto levels = anchor_levels(head, H, W);
  return generate_anchors(levels, head.ratios);
}

// Draws the parameter-independent part of a training step from the current
// RPN outputs and the ground truth.
template <class T>
TrainPlan<T> make_plan(const Tape<T>& tape, const ModelOutputs& out, const ModelConfig& cfg, std::size_t H,
                       std::size_t W, const std::vector<Instance>& gts, Rng& rng) {
  const auto anchors = model_anchors(cfg, H, W);
  TrainPlan<T> plan;
  plan_rpn(plan, anchors, cfg.head().anchors_per_cell(), gts, cfg.sampling, rng);
  const auto proposals = select_proposals(tape, out.rpn, anchors, H, W, cfg.train_proposals);
  plan_heads(plan, proposals, gts, cfg.sampling, rng);
  return plan;
}

template <class T>
LossBreakdown<T> loss_from_plan(const Bound<T>& p, const ModelOutputs& out, const TrainPlan<T>& plan) {
  HeadOutputs<T> heads;
  if (!plan.rois.empty()) {
    const auto bh = box_head_forward(p, out.refined, kLevelStrides[0], plan.rois);
    heads.class_logits = bh.class_logits;
    heads.box_deltas = bh.box_deltas;
  }
  if (plan.positive_rois > 0) heads.mask_logits = mask_head_forward(p, out.refined, kLevelStrides[0], plan.positive_boxes());
  return compute_losses(p.tape(), out.rpn, heads, plan);
}

// Fixed input normalization applied by training and inference alike.
template <class T>
Tensor<T> normalize_input(const Tensor<T>& image) {
  Tensor<T> out = image;
  for (auto& v : out.vec()) v = (v - T(0.5)) * T(4);
  return out;
}

// One image's loss on a fresh forward pass; the plan is drawn from rng.
template <class T>
LossBreakdown<T> image_loss(const Bound<T>& p, const ModelConfig& cfg, const Tensor<T>& image,
                            const std::vector<Instance>& gts, Rng& rng) {
  Tape<T>& tape = p.tape();
  const Var x = ad::constant(tape, normalize_input(image));
  const ModelOutputs out = model_forward(p, cfg, x);
  const TrainPlan<T> plan = make_plan(tape, out, cfg, image.shape().h, image.shape().w, gts, rng);
  return loss_from_plan(p, out, plan);
}

// Thresholded paste of a 28x28 probability map into image coordinates,
// sampling bilinearly at pixel centers inside the box.
template <class T>
BinaryMask paste_mask(const T* probs, const Box& box, std::size_t H, std::size_t W, double threshold) {
  BinaryMask m(H, W);
  const double bw = box.width(), bh = box.height();
  if (!(bw > 0) || !(bh > 0)) return m;
  const auto x0 = static_cast<std::size_t>(std::max(0.0f, std::floor(box.x1)));
  const auto y0 = static_cast<std::size_t>(std::max(0.0f, std::floor(box.y1)));
  const auto x1 = std::min<std::size_t>(W, static_cast<std::size_t>(std::max(0.0f, std::ceil(box.x2))));
  const auto y1 = std::min<std::size_t>(H, static_cast<std::size_t>(std::max(0.0f, std::ceil(box.y2))));
  const double S = double(kMaskSize);
  for (std::size_t y = y0; y < y1; ++y) {
    const double cy = double(y) + 0.5;
    if (cy < box.y1 || cy >= box.y2) continue;
    const double v = std::clamp((cy - box.y1) / bh * S - 0.5, 0.0, S - 1);
    const auto v0 = static_cast<std::size_t>(v);
    const std::size_t v1 = std::min(v0 + 1, kMaskSize - 1);
    const double fv = v - double(v0);
    for (std::size_t x = x0; x < x1; ++x) {
      const double cx = double(x) + 0.5;
      if (cx < box.x1 || cx >= box.x2) continue;
      const double u = std::clamp((cx - box.x1) / bw * S - 0.5, 0.0, S - 1);
      const auto u0 = static_cast<std::size_t>(u);
      const std::size_t u1 = std::min(u0 + 1, kMaskSize - 1);
      const double fu = u - double(u0);
      const double top = probs[v0 * kMaskSize + u0] + fu * (probs[v0 * kMaskSize + u1] - probs[v0 * kMaskSize + u0]);
      const double bot = probs[v1 * kMaskSize + u0] + fu * (probs[v1 * kMaskSize + u1] - probs[v1 * kMaskSize + u0]);
      if (top + fv * (bot - top) >= threshold) m.at(y, x) = 1;
    }
  }
  return m;
}

// Full inference. Deterministic for fixed parameters and image.
template <class T>
std::vector<Detection> predict_image(const ParamStore<T>& params, const ModelConfig& cfg, const Tensor<T>& image) {
  const std::size_t H = image.shape().h, W = image.shape().w;
  Tape<T> tape;
  Bound<T> p(tape, params, false);
  const ModelOutputs out = model_forward(p, cfg, ad::constant(tape, normalize_input(image)));
  const auto anchors = model_anchors(cfg, H, W);
  const auto proposals = select_proposals(tape, out.rpn, anchors, H, W, cfg.eval_proposals);
  if (proposals.empty()) return {};
  std::vector<Box> rois;
  for (const auto& pr : proposals) rois.push_back(pr.box);
  const auto heads = box_head_forward(p, out.refined, kLevelStrides[0], rois);
  const Tensor<T>& logits = tape.value(heads.class_logits);
  const Tensor<T>& deltas = tape.value(heads.box_deltas);
  constexpr std::size_t K = kNumClasses + 1;
  const BoxCoder coder = head_box_coder();

  struct Candidate {
    Detection det;
    std::size_t order = 0;
  };
  std::vector<Candidate> kept;
  for (int c = 1; c <= kNumClasses; ++c) {
    std::vector<Box> boxes;
    std::vector<float> scores;
    for (std::size_t r = 0; r < rois.size(); ++r) {
      const T* row = logits.data() + r * K;
      T m = row[0];
      for (std::size_t k = 1; k < K; ++k) m = std::max(m, row[k]);
      T z = 0;
      for (std::size_t k = 0; k < K; ++k) z += std::exp(row[k] - m);
      const double score = double(std::exp(row[c] - m) / z);
      if (!(score > cfg.score_threshold)) continue;
      Deltas d{};
      for (std::size_t j = 0; j < 4; ++j) d[j] = static_cast<float>(deltas[r * 4 * K + 4 * std::size_t(c) + j]);
      const Box b = clip_box(coder.decode(rois[r], d), float(W), float(H));
      if (!b.valid()) continue;
      boxes.push_back(b);
      scores.push_back(float(score));
    }
    for (std::size_t i : nms(boxes, scores, cfg.nms_threshold)) {
      Detection det;
      det.label = c;
      det.score = scores[i];
      det.box = boxes[i];
      kept.push_back({det, kept.size()});
    }
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const Candidate& a, const Candidate& b) { return a.det.score > b.det.score; });
  if (kept.size() > cfg.max_detections) kept.resize(cfg.max_detections);
  if (kept.empty()) return {};

  std::vector<Box> final_boxes;
  for (const auto& k : kept) final_boxes.push_back(k.det.box);
  const Var mask_logits = mask_head_forward(p, out.refined, kLevelStrides[0], final_boxes);
  const Tensor<T>& ml = tape.value(mask_logits);
  std::vector<Detection> dets;
  std::vector<T> probs(kMaskSize * kMaskSize);
  for (std::size_t i = 0; i < kept.size(); ++i) {
    Detection det = kept[i].det;
    const T* plane = ml.plane(i, std::size_t(det.label - 1));
    for (std::size_t k = 0; k < probs.size(); ++k) probs[k] = ad::sigmoid_scalar(plane[k]);
    det.mask = paste_mask(probs.data(), det.box, H, W, cfg.mask_threshold);
    dets.push_back(std::move(det));
  }
  return dets;
}

// Parameter count plus closed-form multiply-accumulates of one forward pass.
struct CostReport {
  std::size_t parameters = 0;
  std::uint64_t conv_macs = 0;   // scales with image area
  std::uint64_t dense_macs = 0;  // SAG gate and box head
  std::uint64_t head_conv_macs = 0;
};

inline CostReport count_params_flops(std::size_t parameters, const ModelConfig& cfg, std::size_t H, std::size_t W,
                                     std::size_t rois = 0) {
  CostReport r;
  r.parameters = parameters;
  const std::size_t h2 = H / 4, w2 = W / 4;
  r.conv_macs = backbone_conv_macs(cfg.backbone(), H, W) + pyramid_conv_macs(cfg.pyramid(), h2, w2) +
                rpn_conv_macs(cfg.head(), h2, w2);
  if (cfg.use_slcf) {
    r.conv_macs += slcf_conv_macs(cfg.slcf(), h2, w2);
    r.conv_macs += std::uint64_t(h2) * w2 * cfg.width() * cfg.slcf().output_channels();
  }
  if (cfg.use_sag) r.dense_macs += sag_dense_macs(cfg.sag());
  r.dense_macs += head_dense_macs(cfg.head(), rois);
  r.head_conv_macs = mask_conv_macs(cfg.head(), rois);
  return r;
}

template <class T>
CostReport count_params_flops(const ParamStore<T>& params, const ModelConfig& cfg, std::size_t H, std::size_t W,
                              std::size_t rois = 0) {
  return count_params_flops(params.parameter_count(), cfg, H, W, rois);
}

}  // namespace usseg
