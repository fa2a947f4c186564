#pragma once

// Raw forward/backward kernels on Tensor buffers. No autodiff bookkeeping
// lives here; ops.hpp wraps these into taped operations.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "usseg/errors.hpp"
#include "usseg/fault.hpp"
#include "usseg/geometry.hpp"
#include "usseg/tensor.hpp"

namespace usseg {

struct Padding {
  std::size_t top = 0, bottom = 0, left = 0, right = 0;

  static Padding uniform(std::size_t p) { return {p, p, p, p}; }
  // Symmetric zero padding that preserves spatial size at stride 1.
  static Padding same(std::size_t kh, std::size_t kw, std::size_t dilation = 1) {
    if (kh % 2 == 0 || kw % 2 == 0) throw ArgumentError("SAME padding needs odd kernel sizes");
    const std::size_t ph = dilation * (kh - 1) / 2, pw = dilation * (kw - 1) / 2;
    return {ph, ph, pw, pw};
  }
  bool operator==(const Padding&) const = default;
};

struct ConvGeom {
  std::size_t stride = 1;
  std::size_t dilation = 1;
  Padding pad{};
};

inline std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t pad_lo, std::size_t pad_hi,
                                 std::size_t stride, std::size_t dilation) {
  if (stride < 1) throw ArgumentError("conv stride must be >= 1");
  if (dilation < 1) throw ArgumentError("conv dilation must be >= 1");
  const long long span = static_cast<long long>(dilation * (k - 1) + 1);
  const long long padded = static_cast<long long>(in + pad_lo + pad_hi);
  if (padded < span) throw ArgumentError("conv kernel extent exceeds padded input");
  return static_cast<std::size_t>((padded - span) / static_cast<long long>(stride)) + 1;
}

// Transposed convolution output size s*(i-1) - 2p + k.
inline std::size_t tconv_out_size(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (stride < 1) throw ArgumentError("transposed conv stride must be >= 1");
  const long long out = static_cast<long long>(stride) * (static_cast<long long>(in) - 1) -
                        2 * static_cast<long long>(pad) + static_cast<long long>(k);
  if (out <= 0) throw ArgumentError("transposed conv output size " + std::to_string(out) + " <= 0");
  return static_cast<std::size_t>(out);
}

namespace kernels {

// Multiply-accumulate tally of conv/dense kernels on this thread; used to
// cross-check the closed-form cost model.
inline std::uint64_t& mac_counter() {
  thread_local std::uint64_t count = 0;
  return count;
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using CMatMap = Eigen::Map<const RowMat<T>>;

// cols has rows indexed by (c, i, j) and columns by output position.
template <class T>
void im2col(const T* x, std::size_t C, std::size_t H, std::size_t W, std::size_t kh, std::size_t kw,
            const ConvGeom& g, std::size_t Ho, std::size_t Wo, T* cols) {
  const long long s = static_cast<long long>(g.stride), d = static_cast<long long>(g.dilation);
  const long long pt = static_cast<long long>(g.pad.top), pl = static_cast<long long>(g.pad.left);
  const long long Hs = static_cast<long long>(H), Ws = static_cast<long long>(W);
  std::size_t r = 0;
  for (std::size_t c = 0; c < C; ++c) {
    const T* xc = x + c * H * W;
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j, ++r) {
        T* row = cols + r * Ho * Wo;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const long long iy = static_cast<long long>(oy) * s - pt + static_cast<long long>(i) * d;
          T* dst = row + oy * Wo;
          if (iy < 0 || iy >= Hs) {
            std::fill_n(dst, Wo, T(0));
            continue;
          }
          const T* src = xc + iy * Ws;
          long long ix = -pl + static_cast<long long>(j) * d;
          for (std::size_t ox = 0; ox < Wo; ++ox, ix += s) dst[ox] = (ix >= 0 && ix < Ws) ? src[ix] : T(0);
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into an image buffer.
template <class T>
void col2im(const T* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t kh, std::size_t kw,
            const ConvGeom& g, std::size_t Ho, std::size_t Wo, T* x) {
  const long long s = static_cast<long long>(g.stride), d = static_cast<long long>(g.dilation);
  const long long pt = static_cast<long long>(g.pad.top), pl = static_cast<long long>(g.pad.left);
  const long long Hs = static_cast<long long>(H), Ws = static_cast<long long>(W);
  std::size_t r = 0;
  for (std::size_t c = 0; c < C; ++c) {
    T* xc = x + c * H * W;
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j, ++r) {
        const T* row = cols + r * Ho * Wo;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const long long iy = static_cast<long long>(oy) * s - pt + static_cast<long long>(i) * d;
          if (iy < 0 || iy >= Hs) continue;
          const T* src = row + oy * Wo;
          T* dst = xc + iy * Ws;
          long long ix = -pl + static_cast<long long>(j) * d;
          for (std::size_t ox = 0; ox < Wo; ++ox, ix += s)
            if (ix >= 0 && ix < Ws) dst[ix] += src[ox];
        }
      }
    }
  }
}

inline bool is_pointwise(std::size_t kh, std::size_t kw, const ConvGeom& g) {
  return kh == 1 && kw == 1 && g.stride == 1 && g.pad == Padding{};
}

template <class T>
Shape conv2d_out_shape(const Shape& x, const Shape& w, const ConvGeom& g) {
  if (x.c != w.c)
    throw ShapeError("conv2d channel mismatch: input " + x.str() + " vs kernel " + w.str());
  if (w.h < 1 || w.w < 1) throw ShapeError("conv2d kernel must be at least 1x1");
  return {x.n, w.n, conv_out_size(x.h, w.h, g.pad.top, g.pad.bottom, g.stride, g.dilation),
          conv_out_size(x.w, w.w, g.pad.left, g.pad.right, g.stride, g.dilation)};
}

// y[n, o] = sum_{c,i,j} w[o, c, i, j] * x[n, c, oy*s - pt + i*d, ox*s - pl + j*d] + b[o]
template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, const ConvGeom& g) {
  const Shape xs = x.shape(), ws = w.shape();
  const Shape ys = conv2d_out_shape<T>(xs, ws, g);
  if (bias && bias->numel() != ws.n) throw ShapeError("conv2d bias length mismatch");
  Tensor<T> y(ys);
  const std::size_t K = ws.c * ws.h * ws.w, P = ys.h * ys.w;
  const bool pointwise = is_pointwise(ws.h, ws.w, g);
  std::vector<T> cols(pointwise ? 0 : K * P);
  CMatMap<T> wm(w.data(), static_cast<Eigen::Index>(ws.n), static_cast<Eigen::Index>(K));
  mac_counter() += xs.n * ws.n * K * P;
  for (std::size_t n = 0; n < xs.n; ++n) {
    const T* colp = x.plane(n, 0);
    if (!pointwise) {
      im2col(x.plane(n, 0), xs.c, xs.h, xs.w, ws.h, ws.w, g, ys.h, ys.w, cols.data());
      colp = cols.data();
    }
    CMatMap<T> cm(colp, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
    MatMap<T> ym(y.plane(n, 0), static_cast<Eigen::Index>(ys.c), static_cast<Eigen::Index>(P));
    ym.noalias() = wm * cm;
    if (bias)
      for (std::size_t o = 0; o < ys.c; ++o) {
        T* yp = y.plane(n, o);
        const T b = (*bias)[o];
        for (std::size_t p = 0; p < P; ++p) yp[p] += b;
      }
  }
  return y;
}

// Accumulates input, weight, and bias gradients of conv2d_forward. Any of the
// outputs may be null.
template <class T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, const ConvGeom& g,
                     Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  const Shape xs = x.shape(), ws = w.shape(), ys = dy.shape();
  const std::size_t K = ws.c * ws.h * ws.w, P = ys.h * ys.w;
  const bool pointwise = is_pointwise(ws.h, ws.w, g);
  std::vector<T> cols(pointwise ? 0 : K * P);
  std::vector<T> dcols(dx && !pointwise ? K * P : 0);
  CMatMap<T> wm(w.data(), static_cast<Eigen::Index>(ws.n), static_cast<Eigen::Index>(K));
  RowMat<T> dwacc;
  if (dw) dwacc = RowMat<T>::Zero(static_cast<Eigen::Index>(ws.n), static_cast<Eigen::Index>(K));
  for (std::size_t n = 0; n < xs.n; ++n) {
    CMatMap<T> dym(dy.plane(n, 0), static_cast<Eigen::Index>(ys.c), static_cast<Eigen::Index>(P));
    if (dw) {
      const T* colp = x.plane(n, 0);
      if (!pointwise) {
        im2col(x.plane(n, 0), xs.c, xs.h, xs.w, ws.h, ws.w, g, ys.h, ys.w, cols.data());
        colp = cols.data();
      }
      CMatMap<T> cm(colp, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
      dwacc.noalias() += dym * cm.transpose();
    }
    if (dx) {
      if (pointwise) {
        MatMap<T> dxm(dx->plane(n, 0), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
        dxm.noalias() += wm.transpose() * dym;
      } else {
        MatMap<T> dcm(dcols.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
        dcm.noalias() = wm.transpose() * dym;
        col2im(dcols.data(), xs.c, xs.h, xs.w, ws.h, ws.w, g, ys.h, ys.w, dx->plane(n, 0));
      }
    }
    if (db)
      for (std::size_t o = 0; o < ys.c; ++o) {
        const T* p = dy.plane(n, o);
        T acc = 0;
        for (std::size_t i = 0; i < P; ++i) acc += p[i];
        (*db)[o] += acc;
      }
  }
  if (dw) {
    if (fault_active(Fault::conv_grad)) dwacc *= T(1.01);
    MatMap<T> dwm(dw->data(), static_cast<Eigen::Index>(ws.n), static_cast<Eigen::Index>(K));
    dwm += dwacc;
  }
}

// Transposed convolution. Kernel dims are (in-channels, out-channels, k, k):
// the same kernel that a conv2d from the output space back to the input space
// would use, so this is exactly the adjoint of that conv2d.
template <class T>
Tensor<T> tconv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, std::size_t stride,
                          std::size_t pad) {
  const Shape xs = x.shape(), ws = w.shape();
  if (xs.c != ws.n)
    throw ShapeError("transposed conv channel mismatch: input " + xs.str() + " vs kernel " + ws.str());
  if (bias && bias->numel() != ws.c) throw ShapeError("transposed conv bias length mismatch");
  const Shape ys{xs.n, ws.c, tconv_out_size(xs.h, ws.h, stride, pad), tconv_out_size(xs.w, ws.w, stride, pad)};
  const ConvGeom g{stride, 1, Padding::uniform(pad)};
  Tensor<T> y(ys);
  const std::size_t K = ws.c * ws.h * ws.w, P = xs.h * xs.w;
  std::vector<T> cols(K * P);
  CMatMap<T> wm(w.data(), static_cast<Eigen::Index>(ws.n), static_cast<Eigen::Index>(K));
  mac_counter() += xs.n * ws.n * K * P;
  for (std::size_t n = 0; n < xs.n; ++n) {
    CMatMap<T> xm(x.plane(n, 0), static_cast<Eigen::Index>(xs.c), static_cast<Eigen::Index>(P));
    MatMap<T> cm(cols.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
    cm.noalias() = wm.transpose() * xm;
    col2im(cols.data(), ys.c, ys.h, ys.w, ws.h, ws.w, g, xs.h, xs.w, y.plane(n, 0));
    if (bias)
      for (std::size_t o = 0; o < ys.c; ++o) {
        T* yp = y.plane(n, o);
        const T b = (*bias)[o];
        for (std::size_t p = 0; p < ys.plane(); ++p) yp[p] += b;
      }
  }
  return y;
}

template <class T>
void tconv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, std::size_t stride,
                      std::size_t pad, Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  const Shape xs = x.shape(), ws = w.shape(), ys = dy.shape();
  const ConvGeom g{stride, 1, Padding::uniform(pad)};
  const std::size_t K = ws.c * ws.h * ws.w, P = xs.h * xs.w;
  std::vector<T> cols(K * P);
  CMatMap<T> wm(w.data(), static_cast<Eigen::Index>(ws.n), static_cast<Eigen::Index>(K));
  RowMat<T> dwacc;
  if (dw) dwacc = RowMat<T>::Zero(static_cast<Eigen::Index>(ws.n), static_cast<Eigen::Index>(K));
  for (std::size_t n = 0; n < xs.n; ++n) {
    im2col(dy.plane(n, 0), ys.c, ys.h, ys.w, ws.h, ws.w, g, xs.h, xs.w, cols.data());
    CMatMap<T> cm(cols.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
    if (dx) {
      MatMap<T> dxm(dx->plane(n, 0), static_cast<Eigen::Index>(xs.c), static_cast<Eigen::Index>(P));
      dxm.noalias() += wm * cm;
    }
    if (dw) {
      CMatMap<T> xm(x.plane(n, 0), static_cast<Eigen::Index>(xs.c), static_cast<Eigen::Index>(P));
      dwacc.noalias() += xm * cm.transpose();
    }
    if (db)
      for (std::size_t o = 0; o < ys.c; ++o) {
        const T* p = dy.plane(n, o);
        T acc = 0;
        for (std::size_t i = 0; i < ys.plane(); ++i) acc += p[i];
        (*db)[o] += acc;
      }
  }
  if (dw) {
    MatMap<T> dwm(dw->data(), static_cast<Eigen::Index>(ws.n), static_cast<Eigen::Index>(K));
    dwm += dwacc;
  }
}

// 2x2 max pooling with stride 2 (floor). argmax holds the winning in-plane
// offset per output; ties go to the first element in row-major order.
template <class T>
Tensor<T> max_pool2_forward(const Tensor<T>& x, std::vector<std::uint32_t>& argmax) {
  const Shape xs = x.shape();
  if (xs.h < 2 || xs.w < 2) throw ArgumentError("max pool needs spatial dims >= 2, got " + xs.str());
  const Shape ys{xs.n, xs.c, xs.h / 2, xs.w / 2};
  Tensor<T> y(ys);
  argmax.assign(ys.numel(), 0);
  std::size_t o = 0;
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t c = 0; c < xs.c; ++c) {
      const T* p = x.plane(n, c);
      for (std::size_t oy = 0; oy < ys.h; ++oy)
        for (std::size_t ox = 0; ox < ys.w; ++ox, ++o) {
          std::size_t best = 2 * oy * xs.w + 2 * ox;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx = (2 * oy + dy) * xs.w + 2 * ox + dx;
              if (p[idx] > p[best]) best = idx;
            }
          y[o] = p[best];
          argmax[o] = static_cast<std::uint32_t>(best);
        }
    }
  return y;
}

enum class GlobalPool { average, max };

// Pools each (batch, channel) plane to a single value: arithmetic mean over
// H*W elements, or the maximum (first occurrence recorded in argmax).
template <class T>
Tensor<T> global_pool_forward(const Tensor<T>& x, GlobalPool kind, std::vector<std::uint32_t>* argmax) {
  const Shape xs = x.shape();
  if (xs.plane() == 0) throw ArgumentError("global pooling over an empty spatial extent");
  Tensor<T> y({xs.n, xs.c, 1, 1});
  if (argmax) argmax->assign(xs.n * xs.c, 0);
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t c = 0; c < xs.c; ++c) {
      const T* p = x.plane(n, c);
      if (kind == GlobalPool::average) {
        T acc = 0;
        for (std::size_t i = 0; i < xs.plane(); ++i) acc += p[i];
        y[n * xs.c + c] = acc / static_cast<T>(xs.plane());
      } else {
        std::size_t best = 0;
        for (std::size_t i = 1; i < xs.plane(); ++i)
          if (p[i] > p[best]) best = i;
        y[n * xs.c + c] = p[best];
        if (argmax) (*argmax)[n * xs.c + c] = static_cast<std::uint32_t>(best);
      }
    }
  return y;
}

// Half-pixel-center sampling: src = (dst + 0.5) * in / out - 0.5, clamped to
// [0, in - 1].
struct LinearTap {
  std::size_t lo = 0, hi = 0;
  double frac = 0;
};

inline std::vector<LinearTap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<LinearTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    taps[i] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
  }
  return taps;
}

template <class T>
Tensor<T> resize_bilinear_forward(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  if (out_h < 1 || out_w < 1) throw ArgumentError("resize target must be at least 1x1");
  const Shape xs = x.shape();
  if (xs.plane() == 0) throw ArgumentError("resize of an empty tensor");
  const auto ty = bilinear_taps(xs.h, out_h), tx = bilinear_taps(xs.w, out_w);
  Tensor<T> y({xs.n, xs.c, out_h, out_w});
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t c = 0; c < xs.c; ++c) {
      const T* p = x.plane(n, c);
      T* q = y.plane(n, c);
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        const T fy = static_cast<T>(ty[oy].frac);
        const T* r0 = p + ty[oy].lo * xs.w;
        const T* r1 = p + ty[oy].hi * xs.w;
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const T fx = static_cast<T>(tx[ox].frac);
          const T top = r0[tx[ox].lo] + fx * (r0[tx[ox].hi] - r0[tx[ox].lo]);
          const T bot = r1[tx[ox].lo] + fx * (r1[tx[ox].hi] - r1[tx[ox].lo]);
          q[oy * out_w + ox] = top + fy * (bot - top);
        }
      }
    }
  return y;
}

template <class T>
void resize_bilinear_backward(const Shape& xs, const Tensor<T>& dy, Tensor<T>& dx) {
  const Shape ys = dy.shape();
  const auto ty = bilinear_taps(xs.h, ys.h), tx = bilinear_taps(xs.w, ys.w);
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t c = 0; c < xs.c; ++c) {
      const T* g = dy.plane(n, c);
      T* d = dx.plane(n, c);
      for (std::size_t oy = 0; oy < ys.h; ++oy) {
        const T fy = static_cast<T>(ty[oy].frac);
        for (std::size_t ox = 0; ox < ys.w; ++ox) {
          const T fx = static_cast<T>(tx[ox].frac);
          const T v = g[oy * ys.w + ox];
          d[ty[oy].lo * xs.w + tx[ox].lo] += (1 - fx) * (1 - fy) * v;
          d[ty[oy].lo * xs.w + tx[ox].hi] += fx * (1 - fy) * v;
          d[ty[oy].hi * xs.w + tx[ox].lo] += (1 - fx) * fy * v;
          d[ty[oy].hi * xs.w + tx[ox].hi] += fx * fy * v;
        }
      }
    }
}

// ---------------------------------------------------------------------------
// RoI align: each output bin averages a 2x2 grid of bilinear samples. Box
// coordinates are mapped with spatial_scale and shifted by half a cell so
// that pixel centers line up with feature cell centers.

struct BilinearSample {
  std::size_t i00 = 0, i01 = 0, i10 = 0, i11 = 0;
  double w00 = 0, w01 = 0, w10 = 0, w11 = 0;
  bool valid = false;
};

inline BilinearSample bilinear_sample(double y, double x, std::size_t H, std::size_t W) {
  BilinearSample s;
  if (y < -1.0 || y > double(H) || x < -1.0 || x > double(W)) return s;
  y = std::max(y, 0.0);
  x = std::max(x, 0.0);
  auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
  std::size_t y1, x1;
  if (y0 >= H - 1) {
    y0 = y1 = H - 1;
    y = double(y0);
  } else {
    y1 = y0 + 1;
  }
  if (x0 >= W - 1) {
    x0 = x1 = W - 1;
    x = double(x0);
  } else {
    x1 = x0 + 1;
  }
  const double ly = y - double(y0), lx = x - double(x0), hy = 1.0 - ly, hx = 1.0 - lx;
  s.i00 = y0 * W + x0;
  s.i01 = y0 * W + x1;
  s.i10 = y1 * W + x0;
  s.i11 = y1 * W + x1;
  s.w00 = hy * hx;
  s.w01 = hy * lx;
  s.w10 = ly * hx;
  s.w11 = ly * lx;
  s.valid = true;
  return s;
}

inline constexpr std::size_t kRoiSamples = 2;

// Visits every (bin, sample) pair of one RoI.
template <class F>
void for_each_roi_sample(const Box& box, double spatial_scale, std::size_t out, std::size_t H, std::size_t W,
                         F&& f) {
  if (!(box.x2 > box.x1) || !(box.y2 > box.y1)) throw ArgumentError("roi_align on a zero-area box");
  const double x0 = double(box.x1) * spatial_scale - 0.5, y0 = double(box.y1) * spatial_scale - 0.5;
  const double bw = (double(box.x2) - double(box.x1)) * spatial_scale / double(out);
  const double bh = (double(box.y2) - double(box.y1)) * spatial_scale / double(out);
  for (std::size_t py = 0; py < out; ++py)
    for (std::size_t px = 0; px < out; ++px)
      for (std::size_t iy = 0; iy < kRoiSamples; ++iy) {
        const double y = y0 + double(py) * bh + (double(iy) + 0.5) * bh / double(kRoiSamples);
        for (std::size_t ix = 0; ix < kRoiSamples; ++ix) {
          const double x = x0 + double(px) * bw + (double(ix) + 0.5) * bw / double(kRoiSamples);
          f(py * out + px, bilinear_sample(y, x, H, W));
        }
      }
}

// feature is (1, C, H, W); result is (R, C, out, out).
template <class T>
Tensor<T> roi_align_forward(const Tensor<T>& feature, std::span<const Box> boxes, std::size_t out,
                            double spatial_scale) {
  const Shape fs = feature.shape();
  if (fs.n != 1) throw ShapeError("roi_align expects a single-image feature map, got " + fs.str());
  Tensor<T> y({boxes.size(), fs.c, out, out});
  const T inv = T(1) / T(kRoiSamples * kRoiSamples);
  for (std::size_t r = 0; r < boxes.size(); ++r) {
    std::vector<BilinearSample> samples;
    samples.reserve(out * out * kRoiSamples * kRoiSamples);
    for_each_roi_sample(boxes[r], spatial_scale, out, fs.h, fs.w,
                        [&](std::size_t, const BilinearSample& s) { samples.push_back(s); });
    for (std::size_t c = 0; c < fs.c; ++c) {
      const T* p = feature.plane(0, c);
      T* q = y.plane(r, c);
      for (std::size_t b = 0; b < out * out; ++b) {
        T acc = 0;
        for (std::size_t k = 0; k < kRoiSamples * kRoiSamples; ++k) {
          const auto& s = samples[b * kRoiSamples * kRoiSamples + k];
          if (!s.valid) continue;
          acc += T(s.w00) * p[s.i00] + T(s.w01) * p[s.i01] + T(s.w10) * p[s.i10] + T(s.w11) * p[s.i11];
        }
        q[b] = acc * inv;
      }
    }
  }
  return y;
}

template <class T>
void roi_align_backward(const Shape& fs, std::span<const Box> boxes, double spatial_scale, const Tensor<T>& dy,
                        Tensor<T>& dfeature) {
  const std::size_t out = dy.shape().h;
  const T inv = T(1) / T(kRoiSamples * kRoiSamples);
  for (std::size_t r = 0; r < boxes.size(); ++r) {
    std::vector<BilinearSample> samples;
    samples.reserve(out * out * kRoiSamples * kRoiSamples);
    for_each_roi_sample(boxes[r], spatial_scale, out, fs.h, fs.w,
                        [&](std::size_t, const BilinearSample& s) { samples.push_back(s); });
    for (std::size_t c = 0; c < fs.c; ++c) {
      T* d = dfeature.plane(0, c);
      const T* g = dy.plane(r, c);
      for (std::size_t b = 0; b < out * out; ++b) {
        const T v = g[b] * inv;
        for (std::size_t k = 0; k < kRoiSamples * kRoiSamples; ++k) {
          const auto& s = samples[b * kRoiSamples * kRoiSamples + k];
          if (!s.valid) continue;
          d[s.i00] += T(s.w00) * v;
          d[s.i01] += T(s.w01) * v;
          d[s.i10] += T(s.w10) * v;
          d[s.i11] += T(s.w11) * v;
        }
      }
    }
  }
}

}  // namespace kernels
}  // namespace usseg
