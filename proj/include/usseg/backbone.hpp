#pragma once

// VGG-19-style feature extractor at half the standard channel widths.

#include <array>
#include <string>

#include "usseg/ops.hpp"
#include "usseg/params.hpp"

namespace usseg {

struct BackboneConfig {
  std::array<std::size_t, 5> widths{32, 64, 128, 256, 256};  // half of VGG-19's (64, 128, 256, 512, 512)
  std::array<std::size_t, 5> convs{2, 2, 4, 4, 4};
  std::size_t in_channels = 1;
  std::size_t width_divisor = 1;

  std::array<std::size_t, 5> effective_widths() const {
    if (width_divisor < 1) throw ArgumentError("width divisor must be >= 1");
    std::array<std::size_t, 5> out{};
    for (std::size_t i = 0; i < 5; ++i) {
      out[i] = widths[i] / width_divisor;
      if (out[i] < 1) throw ArgumentError("backbone width " + std::to_string(i) + " vanishes at divisor " +
                                          std::to_string(width_divisor));
    }
    return out;
  }

  void validate() const {
    effective_widths();
    if (in_channels < 1) throw ArgumentError("backbone needs at least one input channel");
    for (std::size_t c : convs)
      if (c < 1) throw ArgumentError("every backbone block needs at least one conv");
  }
};

inline std::string backbone_param(std::size_t block, std::size_t conv) {
  return "backbone.b" + std::to_string(block + 1) + ".conv" + std::to_string(conv + 1);
}

template <class T>
void add_backbone_params(ParamStore<T>& store, const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto widths = cfg.effective_widths();
  std::size_t in = cfg.in_channels;
  for (std::size_t b = 0; b < 5; ++b)
    for (std::size_t j = 0; j < cfg.convs[b]; ++j) {
      add_conv(store, backbone_param(b, j), widths[b], in, 3, rng);
      in = widths[b];
    }
}

template <class T>
ParamStore<T> build_backbone(const BackboneConfig& cfg, std::uint64_t seed) {
  ParamStore<T> store;
  Rng rng(seed);
  add_backbone_params(store, cfg, rng);
  return store;
}

// C2..C5 at output strides 4, 8, 16, 32.
struct FeatureLevels {
  Var c2, c3, c4, c5;
};

inline void check_backbone_input(const Shape& s, const BackboneConfig& cfg) {
  if (s.c != cfg.in_channels)
    throw ShapeError("backbone expects " + std::to_string(cfg.in_channels) + " input channels, got " + s.str());
  if (s.h == 0 || s.w == 0 || s.h % 32 != 0 || s.w % 32 != 0)
    throw ArgumentError("backbone input H and W must be positive multiples of 32, got " + s.str());
}

// Each block: 3x3 SAME convs with ReLU, then 2x2 max pool. The pooled output
// of block 1 (stride 2) is not consumed downstream.
template <class T>
FeatureLevels backbone_forward(const Bound<T>& p, const BackboneConfig& cfg, Var image) {
  Tape<T>& tape = p.tape();
  check_backbone_input(tape.shape(image), cfg);
  const ConvGeom same{1, 1, Padding::same(3, 3)};
  std::array<Var, 5> pooled{};
  Var x = image;
  for (std::size_t b = 0; b < 5; ++b) {
    for (std::size_t j = 0; j < cfg.convs[b]; ++j) {
      const std::string name = backbone_param(b, j);
      x = ad::relu(tape, ad::conv2d(tape, x, p[name + ".w"], p.optional(name + ".b"), same));
    }
    x = ad::max_pool2(tape, x);
    pooled[b] = x;
  }
  return {pooled[1], pooled[2], pooled[3], pooled[4]};
}

// Closed-form multiply-accumulates of the backbone convs on an H x W image.
inline std::uint64_t backbone_conv_macs(const BackboneConfig& cfg, std::size_t H, std::size_t W) {
  const auto widths = cfg.effective_widths();
  std::uint64_t macs = 0;
  std::size_t in = cfg.in_channels, h = H, w = W;
  for (std::size_t b = 0; b < 5; ++b) {
    for (std::size_t j = 0; j < cfg.convs[b]; ++j) {
      macs += std::uint64_t(h) * w * widths[b] * in * 9;
      in = widths[b];
    }
    h /= 2;
    w /= 2;
  }
  return macs;
}

}  // namespace usseg
