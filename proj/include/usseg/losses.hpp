#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "usseg/ops.hpp"

namespace usseg::ad {

// Smooth-L1 (Huber with beta): 0.5 x^2 / beta for |x| < beta, |x| - 0.5 beta otherwise.
inline double smooth_l1_value(double x, double beta = 1.0) {
  const double a = std::abs(x);
  return a < beta ? 0.5 * x * x / beta : a - 0.5 * beta;
}

// Elements of x selected by flat index, with their targets.
template <class T>
struct Selection {
  std::vector<std::size_t> index;
  std::vector<T> target;

  void push(std::size_t i, T t) {
    index.push_back(i);
    target.push_back(t);
  }
  std::size_t size() const { return index.size(); }
};

// (1 / norm) * sum over the selection of binary cross-entropy between
// sigmoid(x[i]) and target[i], computed from logits in the stable form.
template <class T>
Var bce_with_logits(Tape<T>& tape, Var x, Selection<T> sel, T norm) {
  if (norm <= T(0)) throw ArgumentError("loss normalizer must be positive");
  const Tensor<T>& xv = tape.value(x);
  T acc = 0;
  for (std::size_t k = 0; k < sel.size(); ++k) {
    if (sel.index[k] >= xv.numel()) throw ShapeError("loss selection index out of range");
    const T z = xv[sel.index[k]], t = sel.target[k];
    acc += std::max(z, T(0)) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  auto shared = std::make_shared<const Selection<T>>(std::move(sel));
  return tape.record(Tensor<T>({1, 1, 1, 1}, acc / norm), {x}, [x, shared, norm](Tape<T>& t, const Tensor<T>& dy) {
    const Tensor<T>& xv = t.value(x);
    Tensor<T>& dx = t.grad_buffer(x);
    const T g = dy[0] / norm;
    for (std::size_t k = 0; k < shared->size(); ++k) {
      const std::size_t i = shared->index[k];
      dx[i] += g * (sigmoid_scalar(xv[i]) - shared->target[k]);
    }
  });
}

template <class T>
Var smooth_l1(Tape<T>& tape, Var x, Selection<T> sel, T norm, T beta = T(1)) {
  if (norm <= T(0)) throw ArgumentError("loss normalizer must be positive");
  const Tensor<T>& xv = tape.value(x);
  T acc = 0;
  for (std::size_t k = 0; k < sel.size(); ++k) {
    if (sel.index[k] >= xv.numel()) throw ShapeError("loss selection index out of range");
    acc += static_cast<T>(smooth_l1_value(double(xv[sel.index[k]] - sel.target[k]), double(beta)));
  }
  auto shared = std::make_shared<const Selection<T>>(std::move(sel));
  return tape.record(Tensor<T>({1, 1, 1, 1}, acc / norm), {x},
                     [x, shared, norm, beta](Tape<T>& t, const Tensor<T>& dy) {
                       const Tensor<T>& xv = t.value(x);
                       Tensor<T>& dx = t.grad_buffer(x);
                       const T g = dy[0] / norm;
                       for (std::size_t k = 0; k < shared->size(); ++k) {
                         const std::size_t i = shared->index[k];
                         const T d = xv[i] - shared->target[k];
                         dx[i] += g * (std::abs(d) < beta ? d / beta : (d > 0 ? T(1) : T(-1)));
                       }
                     });
}

// Mean softmax cross-entropy over rows of x (R, K, 1, 1) against integer labels.
template <class T>
Var softmax_cross_entropy(Tape<T>& tape, Var x, std::vector<int> labels, T norm) {
  if (norm <= T(0)) throw ArgumentError("loss normalizer must be positive");
  const Tensor<T>& xv = tape.value(x);
  const Shape s = xv.shape();
  if (s.h != 1 || s.w != 1 || s.n != labels.size())
    throw ShapeError("softmax_cross_entropy expects (R, K, 1, 1) logits matching labels, got " + s.str());
  auto probs = std::make_shared<std::vector<T>>(s.n * s.c);
  T acc = 0;
  for (std::size_t r = 0; r < s.n; ++r) {
    const T* row = xv.data() + r * s.c;
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= s.c) throw ArgumentError("label out of range");
    T m = row[0];
    for (std::size_t k = 1; k < s.c; ++k) m = std::max(m, row[k]);
    T z = 0;
    for (std::size_t k = 0; k < s.c; ++k) z += std::exp(row[k] - m);
    const T lse = m + std::log(z);
    for (std::size_t k = 0; k < s.c; ++k) (*probs)[r * s.c + k] = std::exp(row[k] - lse);
    acc += lse - row[labels[r]];
  }
  auto lab = std::make_shared<const std::vector<int>>(std::move(labels));
  return tape.record(Tensor<T>({1, 1, 1, 1}, acc / norm), {x},
                     [x, probs, lab, norm, K = s.c](Tape<T>& t, const Tensor<T>& dy) {
                       Tensor<T>& dx = t.grad_buffer(x);
                       const T g = dy[0] / norm;
                       for (std::size_t r = 0; r < lab->size(); ++r)
                         for (std::size_t k = 0; k < K; ++k) {
                           const T onehot = static_cast<int>(k) == (*lab)[r] ? T(1) : T(0);
                           dx[r * K + k] += g * ((*probs)[r * K + k] - onehot);
                         }
                     });
}

}  // namespace usseg::ad
