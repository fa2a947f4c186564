#pragma once

// Differentiable operations recorded on a Tape.

#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "usseg/fault.hpp"
#include "usseg/kernels.hpp"
#include "usseg/tape.hpp"

namespace usseg::ad {

template <class T>
Var constant(Tape<T>& tape, Tensor<T> value) {
  return tape.leaf(std::move(value), false);
}

template <class T>
Var parameter(Tape<T>& tape, Tensor<T> value) {
  return tape.leaf(std::move(value), true);
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic. Binary ops accept identical dims, or one operand of
// dims (N, C, 1, 1) / (1, C, 1, 1) broadcast across the other's spatial plane.

enum class Binary { add, sub, mul };

namespace detail {

struct Broadcast {
  bool full = true;       // identical dims
  bool a_is_small = false;
  Shape out{};
};

inline bool per_channel_of(const Shape& small, const Shape& big) {
  return small.h == 1 && small.w == 1 && small.c == big.c && (small.n == big.n || small.n == 1);
}

inline Broadcast classify(const Shape& a, const Shape& b) {
  if (a == b) return {true, false, a};
  if (per_channel_of(b, a)) return {false, false, a};
  if (per_channel_of(a, b)) return {false, true, b};
  throw ShapeError("elementwise dims mismatch: " + a.str() + " vs " + b.str());
}

// Index of the broadcast operand for flat output index i.
inline std::size_t small_index(const Shape& small, const Shape& out, std::size_t i) {
  const std::size_t nc = i / out.plane();
  const std::size_t n = nc / out.c, c = nc % out.c;
  return (small.n == 1 ? 0 : n * small.c) + c;
}

}  // namespace detail

template <class T>
Var binary(Tape<T>& tape, Binary kind, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  const auto bc = detail::classify(av.shape(), bv.shape());
  Tensor<T> y(bc.out);
  const Shape as = av.shape(), bs = bv.shape();
  for (std::size_t i = 0; i < y.numel(); ++i) {
    const T x0 = bc.full || !bc.a_is_small ? av[i] : av[detail::small_index(as, bc.out, i)];
    const T x1 = bc.full || bc.a_is_small ? bv[i] : bv[detail::small_index(bs, bc.out, i)];
    y[i] = kind == Binary::add ? x0 + x1 : kind == Binary::sub ? x0 - x1 : x0 * x1;
  }
  return tape.record(std::move(y), {a, b}, [a, b, kind, bc, as, bs](Tape<T>& t, const Tensor<T>& dy) {
    const Tensor<T>& av = t.value(a);
    const Tensor<T>& bv = t.value(b);
    const bool ga = t.requires_grad(a), gb = t.requires_grad(b);
    Tensor<T>* da = ga ? &t.grad_buffer(a) : nullptr;
    Tensor<T>* db = gb ? &t.grad_buffer(b) : nullptr;
    for (std::size_t i = 0; i < dy.numel(); ++i) {
      const std::size_t ia = bc.full || !bc.a_is_small ? i : detail::small_index(as, bc.out, i);
      const std::size_t ib = bc.full || bc.a_is_small ? i : detail::small_index(bs, bc.out, i);
      const T g = dy[i];
      switch (kind) {
        case Binary::add:
          if (da) (*da)[ia] += g;
          if (db) (*db)[ib] += g;
          break;
        case Binary::sub:
          if (da) (*da)[ia] += g;
          if (db) (*db)[ib] -= g;
          break;
        case Binary::mul:
          if (da) (*da)[ia] += g * bv[ib];
          if (db) (*db)[ib] += g * av[ia];
          break;
      }
    }
  });
}

template <class T>
Var add(Tape<T>& tape, Var a, Var b) {
  return binary(tape, Binary::add, a, b);
}
template <class T>
Var sub(Tape<T>& tape, Var a, Var b) {
  return binary(tape, Binary::sub, a, b);
}
template <class T>
Var mul(Tape<T>& tape, Var a, Var b) {
  return binary(tape, Binary::mul, a, b);
}

template <class T>
Var scale(Tape<T>& tape, Var a, T factor) {
  Tensor<T> y = tape.value(a);
  for (auto& v : y.vec()) v *= factor;
  return tape.record(std::move(y), {a}, [a, factor](Tape<T>& t, const Tensor<T>& dy) {
    Tensor<T>& da = t.grad_buffer(a);
    for (std::size_t i = 0; i < dy.numel(); ++i) da[i] += factor * dy[i];
  });
}

template <class T>
Var relu(Tape<T>& tape, Var a) {
  Tensor<T> y = tape.value(a);
  for (auto& v : y.vec()) v = v > T(0) ? v : T(0);
  return tape.record(std::move(y), {a}, [a](Tape<T>& t, const Tensor<T>& dy) {
    const Tensor<T>& av = t.value(a);
    Tensor<T>& da = t.grad_buffer(a);
    for (std::size_t i = 0; i < dy.numel(); ++i)
      if (av[i] > T(0)) da[i] += dy[i];
  });
}

// Kept strictly inside (0, 1): for large |x| the rounded result would
// otherwise land on the bound.
template <class T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return std::min(T(1) / (T(1) + std::exp(-x)), std::nextafter(T(1), T(0)));
  const T e = std::exp(x);
  return std::max(e / (T(1) + e), std::numeric_limits<T>::min());
}

template <class T>
Var sigmoid(Tape<T>& tape, Var a) {
  Tensor<T> y = tape.value(a);
  for (auto& v : y.vec()) v = sigmoid_scalar(v);
  auto out = std::make_shared<Var>();
  *out = tape.record(std::move(y), {a}, [a, out](Tape<T>& t, const Tensor<T>& dy) {
    const Tensor<T>& yv = t.value(*out);
    Tensor<T>& da = t.grad_buffer(a);
    const T bias = fault_active(Fault::sigmoid_grad) ? T(1e-3) : T(0);
    for (std::size_t i = 0; i < dy.numel(); ++i) da[i] += dy[i] * (yv[i] * (T(1) - yv[i]) + bias);
  });
  return *out;
}

// ---------------------------------------------------------------------------
// Convolutions.

template <class T>
Var conv2d(Tape<T>& tape, Var x, Var w, Var b, const ConvGeom& geom) {
  const Tensor<T>* bias = b.defined() ? &tape.value(b) : nullptr;
  Tensor<T> y = kernels::conv2d_forward(tape.value(x), tape.value(w), bias, geom);
  std::vector<Var> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return tape.record(std::move(y), inputs, [x, w, b, geom](Tape<T>& t, const Tensor<T>& dy) {
    kernels::conv2d_backward(t.value(x), t.value(w), dy, geom, t.requires_grad(x) ? &t.grad_buffer(x) : nullptr,
                             t.requires_grad(w) ? &t.grad_buffer(w) : nullptr,
                             b.defined() && t.requires_grad(b) ? &t.grad_buffer(b) : nullptr);
  });
}

template <class T>
Var conv_transpose2d(Tape<T>& tape, Var x, Var w, Var b, std::size_t stride, std::size_t pad) {
  const Tensor<T>* bias = b.defined() ? &tape.value(b) : nullptr;
  Tensor<T> y = kernels::tconv2d_forward(tape.value(x), tape.value(w), bias, stride, pad);
  std::vector<Var> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return tape.record(std::move(y), inputs, [x, w, b, stride, pad](Tape<T>& t, const Tensor<T>& dy) {
    kernels::tconv2d_backward(t.value(x), t.value(w), dy, stride, pad,
                              t.requires_grad(x) ? &t.grad_buffer(x) : nullptr,
                              t.requires_grad(w) ? &t.grad_buffer(w) : nullptr,
                              b.defined() && t.requires_grad(b) ? &t.grad_buffer(b) : nullptr);
  });
}

// Affine map W x + b on per-item vectors. x is (N, F, 1, 1), W is (O, F, 1, 1).
template <class T>
Var dense(Tape<T>& tape, Var x, Var w, Var b) {
  const Shape xs = tape.shape(x), ws = tape.shape(w);
  if (xs.h != 1 || xs.w != 1) throw ShapeError("dense expects (N, F, 1, 1) input, got " + xs.str());
  if (ws.c != xs.c || ws.h != 1 || ws.w != 1)
    throw ShapeError("dense weight " + ws.str() + " does not match input " + xs.str());
  return conv2d(tape, x, w, b, ConvGeom{});
}

// ---------------------------------------------------------------------------
// Pooling and resampling.

template <class T>
Var max_pool2(Tape<T>& tape, Var x) {
  auto argmax = std::make_shared<std::vector<std::uint32_t>>();
  Tensor<T> y = kernels::max_pool2_forward(tape.value(x), *argmax);
  return tape.record(std::move(y), {x}, [x, argmax](Tape<T>& t, const Tensor<T>& dy) {
    Tensor<T>& dx = t.grad_buffer(x);
    const Shape xs = dx.shape(), ys = dy.shape();
    for (std::size_t i = 0; i < dy.numel(); ++i) {
      const std::size_t nc = i / ys.plane();
      dx[nc * xs.plane() + (*argmax)[i]] += dy[i];
    }
  });
}

template <class T>
Var global_avg_pool(Tape<T>& tape, Var x) {
  Tensor<T> y = kernels::global_pool_forward(tape.value(x), kernels::GlobalPool::average, nullptr);
  return tape.record(std::move(y), {x}, [x](Tape<T>& t, const Tensor<T>& dy) {
    Tensor<T>& dx = t.grad_buffer(x);
    const std::size_t plane = dx.shape().plane();
    for (std::size_t nc = 0; nc < dy.numel(); ++nc) {
      const T g = dy[nc] / static_cast<T>(plane);
      for (std::size_t i = 0; i < plane; ++i) dx[nc * plane + i] += g;
    }
  });
}

template <class T>
Var global_max_pool(Tape<T>& tape, Var x) {
  auto argmax = std::make_shared<std::vector<std::uint32_t>>();
  Tensor<T> y = kernels::global_pool_forward(tape.value(x), kernels::GlobalPool::max, argmax.get());
  return tape.record(std::move(y), {x}, [x, argmax](Tape<T>& t, const Tensor<T>& dy) {
    Tensor<T>& dx = t.grad_buffer(x);
    const std::size_t plane = dx.shape().plane();
    for (std::size_t nc = 0; nc < dy.numel(); ++nc) dx[nc * plane + (*argmax)[nc]] += dy[nc];
  });
}

template <class T>
Var resize_bilinear(Tape<T>& tape, Var x, std::size_t out_h, std::size_t out_w) {
  Tensor<T> y = kernels::resize_bilinear_forward(tape.value(x), out_h, out_w);
  return tape.record(std::move(y), {x}, [x](Tape<T>& t, const Tensor<T>& dy) {
    Tensor<T>& dx = t.grad_buffer(x);
    kernels::resize_bilinear_backward(dx.shape(), dy, dx);
  });
}

template <class T>
Var roi_align(Tape<T>& tape, Var feature, std::vector<Box> boxes, std::size_t out, double spatial_scale) {
  auto shared = std::make_shared<const std::vector<Box>>(std::move(boxes));
  Tensor<T> y = kernels::roi_align_forward(tape.value(feature), std::span<const Box>(*shared), out, spatial_scale);
  return tape.record(std::move(y), {feature}, [feature, shared, spatial_scale](Tape<T>& t, const Tensor<T>& dy) {
    Tensor<T>& df = t.grad_buffer(feature);
    kernels::roi_align_backward(df.shape(), std::span<const Box>(*shared), spatial_scale, dy, df);
  });
}

// ---------------------------------------------------------------------------
// Structural ops.

template <class T>
Var concat_channels(Tape<T>& tape, const std::vector<Var>& parts) {
  if (parts.empty()) throw ArgumentError("concat_channels of zero parts");
  const Shape first = tape.shape(parts.front());
  std::size_t total_c = 0;
  for (Var p : parts) {
    const Shape s = tape.shape(p);
    if (s.n != first.n || s.h != first.h || s.w != first.w)
      throw ShapeError("concat_channels spatial mismatch: " + first.str() + " vs " + s.str());
    total_c += s.c;
  }
  Tensor<T> y({first.n, total_c, first.h, first.w});
  std::size_t c0 = 0;
  for (Var p : parts) {
    const Tensor<T>& v = tape.value(p);
    for (std::size_t n = 0; n < first.n; ++n) std::copy_n(v.plane(n, 0), v.shape().c * first.plane(), y.plane(n, c0));
    c0 += v.shape().c;
  }
  return tape.record(std::move(y), parts, [parts](Tape<T>& t, const Tensor<T>& dy) {
    std::size_t c0 = 0;
    const Shape ys = dy.shape();
    for (Var p : parts) {
      const std::size_t pc = t.shape(p).c;
      if (t.requires_grad(p)) {
        Tensor<T>& dp = t.grad_buffer(p);
        for (std::size_t n = 0; n < ys.n; ++n) {
          const T* src = dy.plane(n, c0);
          T* dst = dp.plane(n, 0);
          for (std::size_t i = 0; i < pc * ys.plane(); ++i) dst[i] += src[i];
        }
      }
      c0 += pc;
    }
  });
}

template <class T>
Var slice_channels(Tape<T>& tape, Var x, std::size_t begin, std::size_t count) {
  Tensor<T> y = usseg::slice_channels(tape.value(x), begin, count);
  return tape.record(std::move(y), {x}, [x, begin, count](Tape<T>& t, const Tensor<T>& dy) {
    Tensor<T>& dx = t.grad_buffer(x);
    for (std::size_t n = 0; n < dy.shape().n; ++n) {
      const T* src = dy.plane(n, 0);
      T* dst = dx.plane(n, begin);
      for (std::size_t i = 0; i < count * dy.shape().plane(); ++i) dst[i] += src[i];
    }
  });
}

template <class T>
Var reshape(Tape<T>& tape, Var x, Shape s) {
  Tensor<T> y = tape.value(x).reshaped(s);
  return tape.record(std::move(y), {x}, [x](Tape<T>& t, const Tensor<T>& dy) {
    Tensor<T>& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i];
  });
}

// Flattens (N, C, H, W) to (N, C*H*W, 1, 1).
template <class T>
Var flatten(Tape<T>& tape, Var x) {
  const Shape s = tape.shape(x);
  return reshape(tape, x, Shape{s.n, s.c * s.h * s.w, 1, 1});
}

// Sum of all elements, as a (1, 1, 1, 1) scalar.
template <class T>
Var sum(Tape<T>& tape, Var x) {
  T acc = 0;
  for (T v : tape.value(x).vec()) acc += v;
  return tape.record(Tensor<T>({1, 1, 1, 1}, acc), {x}, [x](Tape<T>& t, const Tensor<T>& dy) {
    Tensor<T>& dx = t.grad_buffer(x);
    for (auto& v : dx.vec()) v += dy[0];
  });
}

// Sum of a list of scalars.
template <class T>
Var add_n(Tape<T>& tape, const std::vector<Var>& terms) {
  if (terms.empty()) throw ArgumentError("add_n of zero terms");
  T acc = 0;
  for (Var v : terms) {
    if (tape.value(v).numel() != 1) throw ShapeError("add_n expects scalars");
    acc += tape.value(v)[0];
  }
  return tape.record(Tensor<T>({1, 1, 1, 1}, acc), terms, [terms](Tape<T>& t, const Tensor<T>& dy) {
    for (Var v : terms)
      if (t.requires_grad(v)) t.grad_buffer(v)[0] += dy[0];
  });
}

}  // namespace usseg::ad
