#pragma once

#include <algorithm>
#include <cmath>

namespace usseg {

// Axis-aligned box (x1, y1, x2, y2) in input-image pixel coordinates.
struct Box {
  float x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  float width() const { return x2 - x1; }
  float height() const { return y2 - y1; }
  float area() const { return std::max(0.0f, width()) * std::max(0.0f, height()); }
  bool valid() const { return x2 > x1 && y2 > y1; }
  bool operator==(const Box&) const = default;
};

// Intersection over union; an empty union yields 0.
inline double box_iou(const Box& a, const Box& b) {
  const double iw = std::max(0.0, double(std::min(a.x2, b.x2)) - double(std::max(a.x1, b.x1)));
  const double ih = std::max(0.0, double(std::min(a.y2, b.y2)) - double(std::max(a.y1, b.y1)));
  const double inter = iw * ih;
  const double uni = double(a.area()) + double(b.area()) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline Box clip_box(Box b, float width, float height) {
  b.x1 = std::clamp(b.x1, 0.0f, width);
  b.x2 = std::clamp(b.x2, 0.0f, width);
  b.y1 = std::clamp(b.y1, 0.0f, height);
  b.y2 = std::clamp(b.y2, 0.0f, height);
  return b;
}

}  // namespace usseg
