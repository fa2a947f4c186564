#pragma once

#include <algorithm>
#include <vector>

#include "usseg/types.hpp"

namespace usseg {

// Even-odd scanline fill. Pixel (x, y) is set when its center (x+.5, y+.5)
// lies inside; the edge-crossing abscissa uses the same expression as the
// classic crossing-number test so both agree bit for bit.
inline BinaryMask rasterize_polygon(const std::vector<Point>& poly, std::size_t H, std::size_t W) {
  if (poly.size() < 3) throw DataError("polygon needs at least 3 vertices, got " + std::to_string(poly.size()));
  BinaryMask mask(H, W);
  const std::size_t n = poly.size();
  std::vector<double> xs;
  for (std::size_t y = 0; y < H; ++y) {
    const double cy = double(y) + 0.5;
    xs.clear();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const Point& a = poly[i];
      const Point& b = poly[j];
      if ((a.y > cy) != (b.y > cy)) xs.push_back((b.x - a.x) * (cy - a.y) / (b.y - a.y) + a.x);
    }
    if (xs.empty()) continue;
    std::sort(xs.begin(), xs.end());
    // inside iff the number of crossings strictly right of the center is odd
    std::size_t k = 0;
    for (std::size_t x = 0; x < W; ++x) {
      const double cx = double(x) + 0.5;
      while (k < xs.size() && xs[k] <= cx) ++k;
      if ((xs.size() - k) % 2 == 1) mask.at(y, x) = 1;
    }
  }
  return mask;
}

}  // namespace usseg
