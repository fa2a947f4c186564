#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "usseg/errors.hpp"
#include "usseg/tensor.hpp"

namespace usseg {

// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool defined() const { return id != npos; }
};

// Reverse-mode autodiff record. Values are appended in evaluation order, so
// node ids are a topological order by construction. A tape is confined to
// one thread.
template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<T>& dy)>;

  Var leaf(Tensor<T> value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), {}, false, requires_grad, {}});
    return Var{nodes_.size() - 1};
  }

  // Records an op output. `inputs` decides whether a gradient is needed; the
  // backward rule is dropped when none of them requires one.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, Backward backward) {
    return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
  }

  Var record(Tensor<T> value, const std::vector<Var>& inputs, Backward backward) {
    bool needs = false;
    for (Var v : inputs) {
      check(v);
      needs = needs || nodes_[v.id].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, false, needs, needs ? std::move(backward) : Backward{}});
    return Var{nodes_.size() - 1};
  }

  const Tensor<T>& value(Var v) const {
    check(v);
    return nodes_[v.id].value;
  }
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool requires_grad(Var v) const {
    check(v);
    return nodes_[v.id].requires_grad;
  }
  std::size_t size() const { return nodes_.size(); }

  // Gradient buffer of v, allocated as zeros on first touch.
  Tensor<T>& grad_buffer(Var v) {
    check(v);
    Node& n = nodes_[v.id];
    if (!n.has_grad) {
      n.grad = Tensor<T>(n.value.shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  // Gradient of the last backward() target with respect to v; zeros when v
  // is unreachable from it.
  Tensor<T> grad(Var v) const {
    check(v);
    const Node& n = nodes_[v.id];
    return n.has_grad ? n.grad : Tensor<T>(n.value.shape());
  }

  void backward(Var loss) {
    check(loss);
    if (nodes_[loss.id].value.numel() != 1)
      throw ArgumentError("backward needs a scalar loss, got dims " + nodes_[loss.id].value.shape().str());
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor<T>();
    }
    grad_buffer(loss)[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.backward) continue;
      n.backward(*this, n.grad);
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    Backward backward;
  };

  void check(Var v) const {
    if (v.id >= nodes_.size()) throw ArgumentError("variable " + std::to_string(v.id) + " is not on this tape");
  }

  std::vector<Node> nodes_;
};

}  // namespace usseg
