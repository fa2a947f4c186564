#pragma once

// Colored detection overlay: translucent masks, box outlines and a small
// "<class initial> <score>" caption drawn with a 3x5 bitmap font.

#include <array>
#include <cstdio>
#include <string>
#include <vector>

#include "usseg/image_io.hpp"
#include "usseg/types.hpp"

namespace usseg {

// nerve yellow, muscle green, vein blue, artery red
inline constexpr std::array<std::array<std::uint8_t, 3>, kNumClasses> kClassColors{
    {{255, 255, 0}, {0, 200, 0}, {0, 90, 255}, {255, 0, 0}}};

namespace detail {

// Rows of 3 bits, most significant bit leftmost.
inline const std::array<std::uint8_t, 5>* glyph(char c) {
  static const std::array<std::array<std::uint8_t, 5>, 15> g{{
      {7, 5, 5, 5, 7}, {2, 6, 2, 2, 7}, {7, 1, 7, 4, 7}, {7, 1, 7, 1, 7}, {5, 5, 7, 1, 1},
      {7, 4, 7, 1, 7}, {7, 4, 7, 5, 7}, {7, 1, 1, 1, 1}, {7, 5, 7, 5, 7}, {7, 5, 7, 1, 7},
      {0, 0, 0, 0, 2},  // .
      {5, 7, 7, 7, 5},  // N
      {5, 7, 7, 5, 5},  // M
      {5, 5, 5, 5, 2},  // V
      {2, 5, 7, 5, 5},  // A
  }};
  if (c >= '0' && c <= '9') return &g[std::size_t(c - '0')];
  switch (c) {
    case '.': return &g[10];
    case 'N': return &g[11];
    case 'M': return &g[12];
    case 'V': return &g[13];
    case 'A': return &g[14];
    default: return nullptr;
  }
}

inline void put(RgbImage& img, long y, long x, const std::array<std::uint8_t, 3>& c) {
  if (y < 0 || x < 0 || y >= long(img.height) || x >= long(img.width)) return;
  auto* p = img.at(std::size_t(y), std::size_t(x));
  p[0] = c[0];
  p[1] = c[1];
  p[2] = c[2];
}

inline void draw_text(RgbImage& img, long y, long x, const std::string& text, const std::array<std::uint8_t, 3>& c) {
  for (char ch : text) {
    if (const auto* g = glyph(ch))
      for (long r = 0; r < 5; ++r)
        for (long b = 0; b < 3; ++b)
          if ((*g)[std::size_t(r)] & (4 >> b)) put(img, y + r, x + b, c);
    x += 4;
  }
}

}  // namespace detail

inline RgbImage render_overlay(const GrayImage& gray, const std::vector<Detection>& dets) {
  RgbImage img(gray.height, gray.width);
  for (std::size_t i = 0; i < gray.pixels.size(); ++i)
    for (int k = 0; k < 3; ++k) img.pixels[i * 3 + std::size_t(k)] = gray.pixels[i];
  for (const auto& d : dets) {
    const auto& c = kClassColors[std::size_t(d.label - 1)];
    if (d.mask.height == img.height && d.mask.width == img.width)
      for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
          if (d.mask.at(y, x)) {
            auto* p = img.at(y, x);
            for (int k = 0; k < 3; ++k) p[k] = std::uint8_t((p[k] * 55 + c[std::size_t(k)] * 45) / 100);
          }
    const long x1 = long(d.box.x1), y1 = long(d.box.y1), x2 = long(d.box.x2) - 1, y2 = long(d.box.y2) - 1;
    for (long x = x1; x <= x2; ++x) {
      detail::put(img, y1, x, c);
      detail::put(img, y2, x, c);
    }
    for (long y = y1; y <= y2; ++y) {
      detail::put(img, y, x1, c);
      detail::put(img, y, x2, c);
    }
    char caption[16];
    std::snprintf(caption, sizeof caption, "%c%.2f", "NMVA"[d.label - 1], double(d.score));
    detail::draw_text(img, y1 >= 7 ? y1 - 6 : y1 + 2, x1 + 1, caption, c);
  }
  return img;
}

}  // namespace usseg
