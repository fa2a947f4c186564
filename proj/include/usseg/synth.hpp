#pragma once

// Seeded synthetic ultrasound-like scenes with exact instance annotations.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "usseg/dataset.hpp"

namespace usseg {

struct CountRange {
  int lo = 0, hi = 0;
  bool operator==(const CountRange&) const = default;
};

struct SynthOptions {
  std::uint64_t seed = 1;
  std::size_t height = 160, width = 160;
  // nerve, muscle, vein, artery
  std::array<CountRange, kNumClasses> counts{{{1, 2}, {1, 1}, {1, 1}, {1, 1}}};
  double speckle = 0.2;
  std::size_t frames_per_group = 2;  // frames sharing one layout (one "patient")

  void validate() const {
    if (height < 16 || width < 16) throw ArgumentError("synthetic images must be at least 16x16");
    for (const auto& c : counts)
      if (c.lo < 0 || c.hi < c.lo) throw ArgumentError("instance count range must satisfy 0 <= lo <= hi");
    if (!(speckle >= 0.0 && speckle < 1.0)) throw ArgumentError("speckle must lie in [0, 1)");
    if (frames_per_group == 0) throw ArgumentError("frames_per_group must be >= 1");
  }
  bool operator==(const SynthOptions&) const = default;
};

namespace detail {

struct SynthShape {
  int label = 0;
  std::vector<Point> polygon;
  // intensity at (x, y) relative to the shape center
  std::function<double(double, double)> shade;
  double cx = 0, cy = 0;
  Box extent() const {
    Box b{1e9f, 1e9f, -1e9f, -1e9f};
    for (const auto& p : polygon) {
      b.x1 = std::min(b.x1, float(p.x));
      b.y1 = std::min(b.y1, float(p.y));
      b.x2 = std::max(b.x2, float(p.x));
      b.y2 = std::max(b.y2, float(p.y));
    }
    return b;
  }
};

inline std::vector<Point> ellipse_polygon(double cx, double cy, double a, double b, double angle, int n = 32) {
  std::vector<Point> out;
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (int i = 0; i < n; ++i) {
    const double t = 2.0 * std::numbers::pi * i / n;
    const double x = a * std::cos(t), y = b * std::sin(t);
    out.push_back({cx + ca * x - sa * y, cy + sa * x + ca * y});
  }
  return out;
}

// Normalized elliptic radius of (dx, dy) in the shape frame.
inline double ellipse_radius(double dx, double dy, double a, double b, double angle) {
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double u = ca * dx + sa * dy, v = -sa * dx + ca * dy;
  return std::sqrt((u * u) / (a * a) + (v * v) / (b * b));
}

inline SynthShape make_shape(int label, double S, Rng& rng) {
  SynthShape s;
  s.label = label;
  const double angle = rng.uniform(0.0, std::numbers::pi);
  switch (label) {
    case 4: {  // artery: round, bright thick wall, dark lumen
      const double a = rng.uniform(0.09, 0.12) * S, b = a * rng.uniform(0.85, 1.0);
      s.polygon = ellipse_polygon(0, 0, a, b, angle);
      s.shade = [=](double dx, double dy) { return ellipse_radius(dx, dy, a, b, angle) > 0.72 ? 0.92 : 0.08; };
      break;
    }
    case 3: {  // vein: flattened, thin faint wall, dark lumen
      const double a = rng.uniform(0.11, 0.15) * S, b = a * rng.uniform(0.45, 0.6);
      s.polygon = ellipse_polygon(0, 0, a, b, angle);
      s.shade = [=](double dx, double dy) { return ellipse_radius(dx, dy, a, b, angle) > 0.8 ? 0.7 : 0.12; };
      break;
    }
    case 1: {  // nerve: bright cluster of dark beads
      const double a = rng.uniform(0.09, 0.12) * S, b = a * rng.uniform(0.7, 1.0);
      s.polygon = ellipse_polygon(0, 0, a, b, angle);
      const int beads = rng.uniform_int(4, 7);
      std::vector<std::array<double, 3>> bead;
      for (int i = 0; i < beads; ++i) {
        const double t = rng.uniform(0.0, 2.0 * std::numbers::pi), r = rng.uniform(0.0, 0.55);
        bead.push_back({r * a * std::cos(t), r * b * std::sin(t), rng.uniform(0.18, 0.26) * std::min(a, b)});
      }
      s.shade = [=](double dx, double dy) {
        const double ca = std::cos(angle), sa = std::sin(angle);
        const double u = ca * dx + sa * dy, v = -sa * dx + ca * dy;
        for (const auto& q : bead)
          if ((u - q[0]) * (u - q[0]) + (v - q[1]) * (v - q[1]) < q[2] * q[2]) return 0.2;
        return 0.75;
      };
      break;
    }
    default: {  // muscle: elongated striated band
      const double len = rng.uniform(0.34, 0.44) * S, thick = rng.uniform(0.14, 0.18) * S;
      const double ang = rng.uniform(-0.25, 0.25);
      const double ca = std::cos(ang), sa = std::sin(ang);
      for (auto [u, v] : {std::pair{-0.5, -0.5}, {0.5, -0.5}, {0.5, 0.5}, {-0.5, 0.5}})
        s.polygon.push_back({ca * u * len - sa * v * thick, sa * u * len + ca * v * thick});
      const double period = rng.uniform(0.04, 0.06) * S;
      s.shade = [=](double dx, double dy) {
        const double v = -sa * dx + ca * dy;
        return 0.58 + 0.14 * std::sin(2.0 * std::numbers::pi * v / period * 3.0 / 4.0);
      };
    }
  }
  return s;
}

inline bool boxes_overlap(const Box& a, const Box& b, float margin) {
  return a.x1 - margin < b.x2 && b.x1 - margin < a.x2 && a.y1 - margin < b.y2 && b.y1 - margin < a.y2;
}

inline SynthShape translated(const SynthShape& s, double cx, double cy) {
  SynthShape t = s;
  t.cx = s.cx + cx;
  t.cy = s.cy + cy;
  for (auto& p : t.polygon) p = {p.x + cx, p.y + cy};
  return t;
}

// Places shapes without overlap of their extents where possible; a shape
// required by the lower count bound is placed regardless after 200 tries.
inline std::vector<SynthShape> layout(const SynthOptions& opts, Rng& rng) {
  const double S = double(std::min(opts.height, opts.width));
  std::vector<SynthShape> placed;
  for (int label : {2, 4, 3, 1}) {
    const CountRange cr = opts.counts[std::size_t(label - 1)];
    const int n = rng.uniform_int(cr.lo, cr.hi);
    for (int k = 0; k < n; ++k) {
      const SynthShape proto = make_shape(label, S, rng);
      const Box e = proto.extent();
      SynthShape best;
      bool ok = false;
      for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
        const double lo_x = 2.0 - e.x1, hi_x = double(opts.width) - 2.0 - e.x2;
        const double lo_y = 2.0 - e.y1, hi_y = double(opts.height) - 2.0 - e.y2;
        const double cx = hi_x > lo_x ? rng.uniform(lo_x, hi_x) : double(opts.width) / 2;
        const double cy = hi_y > lo_y ? rng.uniform(lo_y, hi_y) : double(opts.height) / 2;
        best = translated(proto, cx, cy);
        ok = std::none_of(placed.begin(), placed.end(),
                          [&](const SynthShape& q) { return boxes_overlap(best.extent(), q.extent(), 4.0f); });
      }
      if (ok || k < cr.lo) placed.push_back(best);
    }
  }
  return placed;
}

inline std::uint64_t group_seed(std::uint64_t seed, std::uint64_t group) { return seed ^ ((group + 1) * 0xD1B54A32D192ED03ULL); }

}  // namespace detail

// Renders `count` images. Frames of one group share a layout up to a small
// jitter; each frame draws its own speckle. Pixel values are stored at 8-bit
// precision so a saved corpus reloads identically.
inline std::vector<AnnotatedImage> synth_generate(const SynthOptions& opts, std::size_t count) {
  opts.validate();
  const std::size_t H = opts.height, W = opts.width;
  const double S = double(std::min(H, W));
  std::vector<AnnotatedImage> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t g = i / opts.frames_per_group, f = i % opts.frames_per_group;
    Rng layout_rng(detail::group_seed(opts.seed, g));
    const auto shapes = detail::layout(opts, layout_rng);
    Rng frame_rng(detail::group_seed(opts.seed, g) ^ (0x9E3779B97F4A7C15ULL * (f + 1)));
    const double jx = f == 0 ? 0.0 : frame_rng.uniform(-0.02, 0.02) * S;
    const double jy = f == 0 ? 0.0 : frame_rng.uniform(-0.02, 0.02) * S;
    const double bg_phase = frame_rng.uniform(0.0, 2.0 * std::numbers::pi);

    std::vector<double> scene(H * W);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        scene[y * W + x] = 0.3 + 0.05 * std::sin(bg_phase + 3.0 * double(x) / S + 2.0 * double(y) / S);

    AnnotatedImage img;
    char id[32];
    std::snprintf(id, sizeof id, "synth_%05zu", i);
    img.id = id;
    img.group = int(g);
    for (const auto& base : shapes) {
      const detail::SynthShape s = detail::translated(base, jx, jy);
      auto inst = make_instance(s.label, s.polygon, H, W);
      if (!inst) continue;
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
          if (inst->mask.at(y, x)) scene[y * W + x] = s.shade(double(x) + 0.5 - s.cx, double(y) + 0.5 - s.cy);
      img.instances.push_back(std::move(*inst));
    }
    img.image = Tensor<float>(Shape{1, 1, H, W});
    for (std::size_t k = 0; k < H * W; ++k) {
      const double v = scene[k] * std::max(0.0, 1.0 + opts.speckle * frame_rng.normal());
      img.image.data()[k] = float(quantize_u8(v)) / 255.0f;
    }
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace usseg
