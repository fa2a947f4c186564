#pragma once

// Top-down feature pyramid. The default topology removes the P4 -> P3 link
// and feeds P3 from P5 through a x4 transposed convolution; every merge is a
// channel concatenation followed by a 3x3 conv + ReLU.

#include <array>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "usseg/backbone.hpp"

namespace usseg {

enum class PyramidMode { skip_concat, classic_fpn };
enum class SkipTarget { P3, P2 };

inline std::optional<SkipTarget> parse_skip_target(std::string_view s) {
  if (s == "P3" || s == "p3") return SkipTarget::P3;
  if (s == "P2" || s == "p2") return SkipTarget::P2;
  return std::nullopt;
}
inline std::string to_string(SkipTarget t) { return t == SkipTarget::P3 ? "P3" : "P2"; }

inline std::optional<PyramidMode> parse_pyramid_mode(std::string_view s) {
  if (s == "skip_concat") return PyramidMode::skip_concat;
  if (s == "classic_fpn") return PyramidMode::classic_fpn;
  return std::nullopt;
}
inline std::string to_string(PyramidMode m) { return m == PyramidMode::skip_concat ? "skip_concat" : "classic_fpn"; }

struct PyramidConfig {
  std::size_t width = 128;
  std::array<std::size_t, 4> in_channels{64, 128, 256, 256};  // C2..C5
  PyramidMode mode = PyramidMode::skip_concat;
  SkipTarget skip_target = SkipTarget::P3;
};

// One upsampling edge: source level, factor, destination level.
struct UpsampleEdge {
  std::string from;
  std::string via;  // "tconv" or "bilinear"
  std::size_t factor = 0;
  std::string to;
  std::vector<std::size_t> kernels;  // transposed-conv k (= s) per stage
};

inline std::vector<UpsampleEdge> topology(const PyramidConfig& cfg) {
  if (cfg.mode == PyramidMode::classic_fpn)
    return {{"P5", "bilinear", 2, "P4", {}}, {"P4", "bilinear", 2, "P3", {}}, {"P3", "bilinear", 2, "P2", {}}};
  if (cfg.skip_target == SkipTarget::P3)
    return {{"P5", "tconv", 2, "P4", {2}}, {"P5", "tconv", 4, "P3", {4}}, {"P3", "tconv", 2, "P2", {2}}};
  // P2 variant: the chain is kept and P5 reaches P2 through x4 then x2.
  return {{"P5", "tconv", 2, "P4", {2}},
          {"P4", "tconv", 2, "P3", {2}},
          {"P3", "tconv", 2, "P2", {2}},
          {"P5", "tconv", 8, "P2", {4, 2}}};
}

inline std::string describe_topology(const PyramidConfig& cfg) {
  std::ostringstream os;
  os << "mode=" << to_string(cfg.mode);
  if (cfg.mode == PyramidMode::skip_concat) os << " skip_target=" << to_string(cfg.skip_target);
  os << "\n";
  for (const auto& e : topology(cfg)) {
    os << e.from << " -x" << e.factor << "-> " << e.to << " via " << e.via;
    if (!e.kernels.empty()) {
      os << " k=s=";
      for (std::size_t i = 0; i < e.kernels.size(); ++i) os << (i ? "," : "") << e.kernels[i];
    }
    os << "\n";
  }
  return os.str();
}

inline std::string edge_param(const UpsampleEdge& e, std::size_t stage) {
  return "pyramid.up_" + e.from + "_" + e.to + "_" + std::to_string(stage);
}

inline PyramidConfig pyramid_config_for(const BackboneConfig& bb, std::size_t width_divisor, PyramidMode mode,
                                        SkipTarget target) {
  const auto w = bb.effective_widths();
  if (width_divisor < 1 || 128 / width_divisor < 1) throw ArgumentError("invalid pyramid width divisor");
  return PyramidConfig{128 / width_divisor, {w[1], w[2], w[3], w[4]}, mode, target};
}

template <class T>
void add_pyramid_params(ParamStore<T>& store, const PyramidConfig& cfg, Rng& rng) {
  const std::size_t w = cfg.width;
  for (std::size_t l = 0; l < 4; ++l)
    add_conv(store, "pyramid.lat" + std::to_string(l + 2), w, cfg.in_channels[l], 1, rng);
  if (cfg.mode == PyramidMode::classic_fpn) {
    for (std::size_t l = 2; l <= 5; ++l) add_conv(store, "pyramid.smooth" + std::to_string(l), w, w, 3, rng);
    return;
  }
  for (const auto& e : topology(cfg))
    for (std::size_t s = 0; s < e.kernels.size(); ++s) {
      const std::size_t k = e.kernels[s];
      // Each output cell of a k = s transposed conv sees exactly one input cell.
      store.add(edge_param(e, s) + ".w", init::normal<T>({w, w, k, k}, std::sqrt(2.0 / double(w)), rng));
      store.add(edge_param(e, s) + ".b", Tensor<T>({1, w, 1, 1}));
    }
  const std::size_t p2_inputs = cfg.skip_target == SkipTarget::P2 ? 3 : 2;
  add_conv(store, "pyramid.merge4", w, 2 * w, 3, rng);
  add_conv(store, "pyramid.merge3", w, 2 * w, 3, rng);
  add_conv(store, "pyramid.merge2", w, p2_inputs * w, 3, rng);
}

template <class T>
ParamStore<T> build_pyramid(std::uint64_t seed, std::size_t width_divisor, SkipTarget target = SkipTarget::P3,
                            PyramidMode mode = PyramidMode::skip_concat) {
  ParamStore<T> store;
  Rng rng(seed);
  BackboneConfig bb;
  bb.width_divisor = width_divisor;
  add_pyramid_params(store, pyramid_config_for(bb, width_divisor, mode, target), rng);
  return store;
}

inline PyramidConfig build_pyramid_config(std::size_t width_divisor, std::string_view skip_target,
                                          PyramidMode mode = PyramidMode::skip_concat) {
  auto t = parse_skip_target(skip_target);
  if (!t) throw ArgumentError("unknown skip target '" + std::string(skip_target) + "' (expected P3 or P2)");
  BackboneConfig bb;
  bb.width_divisor = width_divisor;
  return pyramid_config_for(bb, width_divisor, mode, *t);
}

struct PyramidOutput {
  Var p2, p3, p4, p5;
};

inline void check_pyramid_input(const std::array<Shape, 4>& c) {
  for (std::size_t l = 0; l + 1 < 4; ++l)
    if (c[l].h != 2 * c[l + 1].h || c[l].w != 2 * c[l + 1].w || c[l].n != c[l + 1].n)
      throw ShapeError("pyramid inputs must halve per level: C" + std::to_string(l + 2) + " " + c[l].str() +
                       " vs C" + std::to_string(l + 3) + " " + c[l + 1].str());
}

template <class T>
PyramidOutput pyramid_forward(const Bound<T>& p, const PyramidConfig& cfg, const FeatureLevels& c) {
  Tape<T>& tape = p.tape();
  check_pyramid_input({tape.shape(c.c2), tape.shape(c.c3), tape.shape(c.c4), tape.shape(c.c5)});
  auto conv = [&](Var x, const std::string& name, std::size_t k) {
    const ConvGeom g{1, 1, k == 1 ? Padding{} : Padding::same(k, k)};
    return ad::conv2d(tape, x, p[name + ".w"], p.optional(name + ".b"), g);
  };
  const Var l2 = conv(c.c2, "pyramid.lat2", 1), l3 = conv(c.c3, "pyramid.lat3", 1);
  const Var l4 = conv(c.c4, "pyramid.lat4", 1), l5 = conv(c.c5, "pyramid.lat5", 1);

  if (cfg.mode == PyramidMode::classic_fpn) {
    auto up2 = [&](Var x) {
      const Shape s = tape.shape(x);
      return ad::resize_bilinear(tape, x, 2 * s.h, 2 * s.w);
    };
    const Var m5 = l5;
    const Var m4 = ad::add(tape, l4, up2(m5));
    const Var m3 = ad::add(tape, l3, up2(m4));
    const Var m2 = ad::add(tape, l2, up2(m3));
    return {conv(m2, "pyramid.smooth2", 3), conv(m3, "pyramid.smooth3", 3), conv(m4, "pyramid.smooth4", 3),
            conv(m5, "pyramid.smooth5", 3)};
  }

  auto upsample = [&](Var x, const UpsampleEdge& e) {
    for (std::size_t s = 0; s < e.kernels.size(); ++s) {
      const std::string name = edge_param(e, s);
      x = ad::conv_transpose2d(tape, x, p[name + ".w"], p[name + ".b"], e.kernels[s], 0);
    }
    return x;
  };
  auto merge = [&](std::vector<Var> parts, const std::string& name) {
    return ad::relu(tape, conv(ad::concat_channels(tape, parts), name, 3));
  };
  const auto edges = topology(cfg);
  const Var p5 = l5;
  const Var p4 = merge({upsample(p5, edges[0]), l4}, "pyramid.merge4");
  if (cfg.skip_target == SkipTarget::P3) {
    const Var p3 = merge({upsample(p5, edges[1]), l3}, "pyramid.merge3");
    const Var p2 = merge({upsample(p3, edges[2]), l2}, "pyramid.merge2");
    return {p2, p3, p4, p5};
  }
  const Var p3 = merge({upsample(p4, edges[1]), l3}, "pyramid.merge3");
  const Var p2 = merge({upsample(p3, edges[2]), upsample(p5, edges[3]), l2}, "pyramid.merge2");
  return {p2, p3, p4, p5};
}

// Closed-form conv multiply-accumulates given C2's spatial size.
inline std::uint64_t pyramid_conv_macs(const PyramidConfig& cfg, std::size_t h2, std::size_t w2) {
  const std::uint64_t w = cfg.width;
  std::array<std::uint64_t, 4> cells{};
  for (std::size_t l = 0; l < 4; ++l) cells[l] = std::uint64_t(h2 >> l) * (w2 >> l);
  std::uint64_t macs = 0;
  for (std::size_t l = 0; l < 4; ++l) macs += cells[l] * w * cfg.in_channels[l];
  if (cfg.mode == PyramidMode::classic_fpn) {
    for (std::size_t l = 0; l < 4; ++l) macs += cells[l] * w * w * 9;
    return macs;
  }
  // A k = s transposed conv costs w * w * k * k per input cell.
  for (const auto& e : topology(cfg)) {
    std::size_t src = std::size_t(e.from[1] - '2');
    std::uint64_t in_cells = cells[src];
    for (std::size_t k : e.kernels) {
      macs += in_cells * w * w * k * k;
      in_cells *= k * k;
    }
  }
  const std::uint64_t p2_inputs = cfg.skip_target == SkipTarget::P2 ? 3 : 2;
  macs += cells[2] * w * 2 * w * 9 + cells[1] * w * 2 * w * 9 + cells[0] * w * p2_inputs * w * 9;
  return macs;
}

}  // namespace usseg
