#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "usseg/errors.hpp"

namespace usseg {

// Dims of a rank-4 (batch, channels, height, width) tensor.
struct Shape {
  std::size_t n = 0, c = 0, h = 0, w = 0;

  constexpr std::size_t numel() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  constexpr bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
  }
};

// Dense row-major NCHW array. Also used for kernels (out, in, kH, kW) and for
// per-(batch, channel) vectors stored as (N, C, 1, 1).
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape_(s), data_(s.numel(), fill) {}
  Tensor(Shape s, std::vector<T> data) : shape_(s), data_(std::move(data)) {
    if (data_.size() != shape_.numel())
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match dims " + shape_.str());
  }

  static Tensor zeros(Shape s) { return Tensor(s); }
  static Tensor constant(Shape s, T v) { return Tensor(s, v); }

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) { return data_[index(n, c, h, w)]; }
  T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const { return data_[index(n, c, h, w)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  T* plane(std::size_t n, std::size_t c) { return data_.data() + (n * shape_.c + c) * shape_.plane(); }
  const T* plane(std::size_t n, std::size_t c) const {
    return data_.data() + (n * shape_.c + c) * shape_.plane();
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape s) const {
    if (s.numel() != shape_.numel())
      throw ShapeError("cannot reshape " + shape_.str() + " to " + s.str());
    Tensor out = *this;
    out.shape_ = s;
    return out;
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  Shape shape_{};
  std::vector<T> data_;
};

// Channels [begin, begin + count) of every batch item.
template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  const Shape& s = x.shape();
  if (begin + count > s.c) throw ShapeError("channel slice out of range for " + s.str());
  Tensor<T> out({s.n, count, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n)
    std::copy_n(x.plane(n, begin), count * s.plane(), out.plane(n, 0));
  return out;
}

// ---------------------------------------------------------------------------
// BTSR binary tensor files: "BTSR", u8 version = 1, u8 rank, rank x u32 LE dims,
// then the row-major little-endian f32 payload.

namespace btsr {

inline constexpr std::uint8_t kVersion = 1;

namespace detail {
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}
}  // namespace detail

template <class T>
std::string encode(const Tensor<T>& t) {
  const Shape& s = t.shape();
  std::string out = "BTSR";
  out.push_back(static_cast<char>(kVersion));
  out.push_back(4);
  for (std::size_t d : {s.n, s.c, s.h, s.w}) detail::put_u32(out, static_cast<std::uint32_t>(d));
  out.reserve(out.size() + 4 * t.numel());
  for (std::size_t i = 0; i < t.numel(); ++i)
    detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(t[i])));
  return out;
}

// Ranks below 4 are left-padded with unit dims.
inline Tensor<float> decode(std::string_view bytes, const std::string& what = "tensor") {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 6 || bytes.substr(0, 4) != "BTSR") throw DataError(what + ": bad BTSR magic");
  if (p[4] != kVersion) throw DataError(what + ": unsupported BTSR version " + std::to_string(p[4]));
  const std::size_t rank = p[5];
  if (rank > 4) throw DataError(what + ": BTSR rank " + std::to_string(rank) + " exceeds 4");
  if (bytes.size() < 6 + 4 * rank) throw DataError(what + ": truncated BTSR header");
  std::array<std::size_t, 4> dims{1, 1, 1, 1};
  for (std::size_t i = 0; i < rank; ++i) dims[4 - rank + i] = detail::get_u32(p + 6 + 4 * i);
  Shape s{dims[0], dims[1], dims[2], dims[3]};
  const std::size_t off = 6 + 4 * rank;
  if (bytes.size() != off + 4 * s.numel())
    throw DataError(what + ": BTSR payload length mismatch for dims " + s.str());
  std::vector<float> data(s.numel());
  for (std::size_t i = 0; i < data.size(); ++i)
    data[i] = std::bit_cast<float>(detail::get_u32(p + off + 4 * i));
  return Tensor<float>(s, std::move(data));
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <class T>
void save(const Tensor<T>& t, const std::string& path) {
  write_file(path, encode(t));
}

inline Tensor<float> load(const std::string& path) { return decode(read_file(path), path); }

}  // namespace btsr

}  // namespace usseg
