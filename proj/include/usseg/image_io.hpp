#pragma once

// Binary PGM (P5) input/output and PPM (P6) output, 8 bits per sample.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "usseg/errors.hpp"
#include "usseg/tensor.hpp"

namespace usseg {

struct GrayImage {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> pixels;
};

struct RgbImage {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> pixels;  // interleaved r,g,b

  RgbImage() = default;
  RgbImage(std::size_t h, std::size_t w) : height(h), width(w), pixels(h * w * 3, 0) {}

  std::uint8_t* at(std::size_t y, std::size_t x) { return &pixels[(y * width + x) * 3]; }
};

namespace detail {

// Next whitespace-delimited header token, skipping '#' comments.
inline std::string pnm_token(const std::vector<char>& buf, std::size_t& pos, const std::string& path) {
  while (pos < buf.size()) {
    const char c = buf[pos];
    if (c == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) tok += buf[pos++];
  if (tok.empty()) throw ParseError(path + ": truncated PNM header");
  return tok;
}

inline std::size_t pnm_number(const std::vector<char>& buf, std::size_t& pos, const std::string& path,
                              const char* field) {
  const std::string tok = pnm_token(buf, pos, path);
  if (!std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; }) || tok.size() > 9)
    throw ParseError(path + ": bad PNM " + field + " '" + tok + "'");
  return std::stoul(tok);
}

}  // namespace detail

inline GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path);
  const std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  if (detail::pnm_token(buf, pos, path) != "P5") throw ParseError(path + ": not a binary PGM (expected P5)");
  GrayImage img;
  img.width = detail::pnm_number(buf, pos, path, "width");
  img.height = detail::pnm_number(buf, pos, path, "height");
  const std::size_t maxval = detail::pnm_number(buf, pos, path, "maxval");
  if (maxval != 255) throw ParseError(path + ": only maxval 255 is supported");
  ++pos;  // single whitespace after maxval
  const std::size_t n = img.height * img.width;
  if (buf.size() < pos + n) throw ParseError(path + ": truncated pixel data");
  img.pixels.assign(buf.begin() + std::ptrdiff_t(pos), buf.begin() + std::ptrdiff_t(pos + n));
  return img;
}

inline void write_pgm(const std::string& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), std::streamsize(img.pixels.size()));
}

inline void write_ppm(const std::string& path, const RgbImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), std::streamsize(img.pixels.size()));
}

inline std::uint8_t quantize_u8(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

// (1,1,H,W) tensor with values k/255.
inline Tensor<float> to_tensor(const GrayImage& img) {
  Tensor<float> t(Shape{1, 1, img.height, img.width});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) t.data()[i] = float(img.pixels[i]) / 255.0f;
  return t;
}

inline GrayImage to_gray(const Tensor<float>& t) {
  const Shape s = t.shape();
  if (s.n != 1 || s.c != 1) throw ShapeError("to_gray expects a (1,1,H,W) tensor, got " + s.str());
  GrayImage img{s.h, s.w, std::vector<std::uint8_t>(s.h * s.w)};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = quantize_u8(t.data()[i]);
  return img;
}

}  // namespace usseg
