#pragma once

// Spatial local contrast features (SLCF) and the self attention gate (SAG).

#include <array>
#include <string>

#include "usseg/ops.hpp"
#include "usseg/params.hpp"

namespace usseg {

struct SlcfConfig {
  std::array<std::size_t, 4> dilations{2, 4, 8, 16};
  std::size_t channels = 128;  // input channels; each branch emits as many
  bool shared_kernel = true;   // one kernel serves the dilated and the plain conv

  std::size_t output_channels() const { return 4 * channels; }

  void validate() const {
    if (channels < 1) throw ArgumentError("SLCF needs at least one channel");
    for (std::size_t i = 0; i < 4; ++i) {
      if (dilations[i] < 1) throw ArgumentError("SLCF dilation must be >= 1");
      if (i > 0 && dilations[i] <= dilations[i - 1]) throw ArgumentError("SLCF dilations must increase strictly");
    }
  }
};

inline SlcfConfig slcf_config_for(std::size_t width_divisor, bool shared_kernel = true) {
  if (width_divisor < 1 || 128 / width_divisor < 1) throw ArgumentError("invalid SLCF width divisor");
  SlcfConfig cfg;
  cfg.channels = 128 / width_divisor;
  cfg.shared_kernel = shared_kernel;
  return cfg;
}

inline std::string slcf_branch(std::size_t i) { return "slcf.branch" + std::to_string(i); }

template <class T>
void add_slcf_params(ParamStore<T>& store, const SlcfConfig& cfg, Rng& rng) {
  cfg.validate();
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string b = slcf_branch(i);
    if (cfg.shared_kernel) {
      // A bias would cancel in the subtraction, so the shared form has none.
      store.add(b + ".w", init::he_normal<T>({cfg.channels, cfg.channels, 3, 3}, rng));
    } else {
      add_conv(store, b + ".dilated", cfg.channels, cfg.channels, 3, rng);
      add_conv(store, b + ".plain", cfg.channels, cfg.channels, 3, rng);
    }
  }
}

template <class T>
ParamStore<T> build_slcf(std::uint64_t seed, std::size_t width_divisor, bool shared_kernel = true) {
  ParamStore<T> store;
  Rng rng(seed);
  add_slcf_params(store, slcf_config_for(width_divisor, shared_kernel), rng);
  return store;
}

// Per branch: r-dilated conv minus plain conv, both SAME-padded; the four
// branch outputs are concatenated along channels.
template <class T>
Var slcf_forward(const Bound<T>& p, const SlcfConfig& cfg, Var x) {
  Tape<T>& tape = p.tape();
  if (tape.shape(x).c != cfg.channels)
    throw ShapeError("SLCF expects " + std::to_string(cfg.channels) + " channels, got " + tape.shape(x).str());
  std::vector<Var> branches;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string b = slcf_branch(i);
    const std::size_t r = cfg.dilations[i];
    const ConvGeom dilated{1, r, Padding::same(3, 3, r)};
    const ConvGeom plain{1, 1, Padding::same(3, 3)};
    Var wide, narrow;
    if (cfg.shared_kernel) {
      wide = ad::conv2d(tape, x, p[b + ".w"], Var{}, dilated);
      narrow = ad::conv2d(tape, x, p[b + ".w"], Var{}, plain);
    } else {
      wide = ad::conv2d(tape, x, p[b + ".dilated.w"], p.optional(b + ".dilated.b"), dilated);
      narrow = ad::conv2d(tape, x, p[b + ".plain.w"], p.optional(b + ".plain.b"), plain);
    }
    branches.push_back(ad::sub(tape, wide, narrow));
  }
  return ad::concat_channels(tape, branches);
}

inline std::uint64_t slcf_conv_macs(const SlcfConfig& cfg, std::size_t h, std::size_t w) {
  return 4 * 2 * std::uint64_t(h) * w * cfg.channels * cfg.channels * 9;
}

// ---------------------------------------------------------------------------

struct SagConfig {
  std::size_t channels = 512;
  std::size_t hidden = 64;

  void validate() const {
    if (channels < 1 || hidden < 1) throw ArgumentError("SAG widths must be positive");
  }
};

// Hidden width is one eighth of the gated channels (512 -> 64 at full width).
inline SagConfig sag_config_for(std::size_t channels) {
  return SagConfig{channels, std::max<std::size_t>(1, channels / 8)};
}

template <class T>
void add_sag_params(ParamStore<T>& store, const SagConfig& cfg, Rng& rng) {
  cfg.validate();
  store.add("sag.fc1.w", init::he_normal<T>({cfg.hidden, cfg.channels, 1, 1}, rng));
  store.add("sag.fc1.b", Tensor<T>({1, cfg.hidden, 1, 1}));
  store.add("sag.fc2.w", init::he_normal<T>({cfg.channels, cfg.hidden, 1, 1}, rng));
  store.add("sag.fc2.b", Tensor<T>({1, cfg.channels, 1, 1}));
}

template <class T>
ParamStore<T> build_sag(std::uint64_t seed, std::size_t channels) {
  ParamStore<T> store;
  Rng rng(seed);
  add_sag_params(store, sag_config_for(channels), rng);
  return store;
}

// Shared two-layer transform applied to a pooled (N, C, 1, 1) vector.
template <class T>
Var sag_theta(const Bound<T>& p, Var v) {
  Tape<T>& tape = p.tape();
  Var h = ad::relu(tape, ad::dense(tape, v, p["sag.fc1.w"], p["sag.fc1.b"]));
  return ad::dense(tape, h, p["sag.fc2.w"], p["sag.fc2.b"]);
}

// Channel weights sigmoid(theta(GAP(f)) + theta(GMP(f))), dims (N, C, 1, 1).
template <class T>
Var sag_weights(const Bound<T>& p, const SagConfig& cfg, Var f) {
  Tape<T>& tape = p.tape();
  if (tape.shape(f).c != cfg.channels)
    throw ShapeError("SAG expects " + std::to_string(cfg.channels) + " channels, got " + tape.shape(f).str());
  Var avg = sag_theta(p, ad::global_avg_pool(tape, f));
  Var mx = sag_theta(p, ad::global_max_pool(tape, f));
  return ad::sigmoid(tape, ad::add(tape, avg, mx));
}

template <class T>
Var sag_forward(const Bound<T>& p, const SagConfig& cfg, Var f) {
  return ad::mul(p.tape(), f, sag_weights(p, cfg, f));
}

inline std::uint64_t sag_dense_macs(const SagConfig& cfg) {
  return 2 * 2 * std::uint64_t(cfg.channels) * cfg.hidden;
}

}  // namespace usseg
