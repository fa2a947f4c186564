#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "usseg/errors.hpp"
#include "usseg/geometry.hpp"

namespace usseg {

// Foreground classes are 1..4; 0 is background.
inline constexpr int kNumClasses = 4;
inline constexpr std::array<std::string_view, kNumClasses> kClassNames{"nerve", "muscle", "vein", "artery"};

inline std::string_view class_name(int label) {
  if (label < 1 || label > kNumClasses) throw ArgumentError("class label out of range: " + std::to_string(label));
  return kClassNames[static_cast<std::size_t>(label - 1)];
}

inline std::optional<int> class_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kClassNames.size(); ++i)
    if (kClassNames[i] == name) return static_cast<int>(i) + 1;
  return std::nullopt;
}

struct BinaryMask {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> data;

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w) : height(h), width(w), data(h * w, 0) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return data[y * width + x]; }

  std::size_t area() const {
    std::size_t a = 0;
    for (auto v : data) a += v != 0;
    return a;
  }

  // Tight pixel-edge box [x_min, x_max + 1) x [y_min, y_max + 1); empty mask -> nullopt.
  std::optional<Box> bounding_box() const {
    std::size_t x0 = width, y0 = height, x1 = 0, y1 = 0;
    bool any = false;
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        if (data[y * width + x]) {
          any = true;
          x0 = std::min(x0, x);
          y0 = std::min(y0, y);
          x1 = std::max(x1, x);
          y1 = std::max(y1, y);
        }
    if (!any) return std::nullopt;
    return Box{float(x0), float(y0), float(x1 + 1), float(y1 + 1)};
  }

  bool operator==(const BinaryMask&) const = default;
};

// IoU of two equal-dims masks; empty union yields 0.
inline double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.height != b.height || a.width != b.width)
    throw ShapeError("mask_iou dims mismatch: " + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                     std::to_string(b.height) + "x" + std::to_string(b.width));
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const bool x = a.data[i] != 0, y = b.data[i] != 0;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 0.0 : double(inter) / double(uni);
}

struct Point {
  double x = 0, y = 0;
  bool operator==(const Point&) const = default;
};

// One ground-truth instance.
struct Instance {
  int label = 0;
  std::vector<Point> polygon;
  BinaryMask mask;
  Box box;
};

// One predicted instance; the mask has full image dims.
struct Detection {
  int label = 0;
  float score = 0;
  Box box;
  BinaryMask mask;
};

}  // namespace usseg
