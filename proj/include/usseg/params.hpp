#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "usseg/errors.hpp"
#include "usseg/rng.hpp"
#include "usseg/tape.hpp"
#include "usseg/tensor.hpp"

namespace usseg {

// Named, ordered learnable tensors with gradient and momentum slots.
template <class T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> momentum;
  };

  Tensor<T>& add(const std::string& name, Tensor<T> value) {
    if (index_.count(name)) throw ArgumentError("duplicate parameter name " + name);
    index_[name] = entries_.size();
    Tensor<T> zeros(value.shape());
    entries_.push_back(Entry{name, std::move(value), zeros, zeros});
    return entries_.back().value;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw MissingTensorError("no parameter named " + name);
    return it->second;
  }
  Tensor<T>& value(const std::string& name) { return entries_[index_of(name)].value; }
  const Tensor<T>& value(const std::string& name) const { return entries_[index_of(name)].value; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
  }

  void zero_grads() {
    for (auto& e : entries_) e.grad.fill(T(0));
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>());
    return out;
  }

  bool same_values(const ParamStore& o) const {
    if (entries_.size() != o.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name != o.entries_[i].name || !(entries_[i].value == o.entries_[i].value)) return false;
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// Parameters bound to leaves of one tape.
template <class T>
class Bound {
 public:
  Bound(Tape<T>& tape, const ParamStore<T>& store, bool requires_grad = true) : tape_(&tape) {
    vars_.reserve(store.size());
    for (const auto& e : store.entries()) {
      vars_.push_back(tape.leaf(e.value, requires_grad));
      index_[e.name] = vars_.size() - 1;
    }
  }

  Var operator[](const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw MissingTensorError("no parameter named " + name);
    return vars_[it->second];
  }
  // Undefined Var when absent (optional biases).
  Var optional(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? Var{} : vars_[it->second];
  }
  Tape<T>& tape() const { return *tape_; }

  // Adds this tape's gradients into the store's gradient slots, scaled.
  void accumulate_grads(ParamStore<T>& store, T scale = T(1)) const {
    auto& entries = store.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const Tensor<T> g = tape_->grad(vars_[i]);
      for (std::size_t k = 0; k < g.numel(); ++k) entries[i].grad[k] += scale * g[k];
    }
  }

 private:
  Tape<T>* tape_;
  std::vector<Var> vars_;
  std::map<std::string, std::size_t> index_;
};

namespace init {

// He fan-in normal: std = sqrt(2 / fan_in).
template <class T>
Tensor<T> he_normal(Shape s, Rng& rng) {
  const double fan_in = double(s.c * s.h * s.w);
  const double std = std::sqrt(2.0 / fan_in);
  Tensor<T> t(s);
  for (auto& v : t.vec()) v = static_cast<T>(rng.normal() * std);
  return t;
}

template <class T>
Tensor<T> normal(Shape s, double std, Rng& rng) {
  Tensor<T> t(s);
  for (auto& v : t.vec()) v = static_cast<T>(rng.normal() * std);
  return t;
}

}  // namespace init

// Adds "<prefix>.w" (out, in, k, k) with He init and "<prefix>.b" zeros.
template <class T>
void add_conv(ParamStore<T>& store, const std::string& prefix, std::size_t out, std::size_t in, std::size_t k,
              Rng& rng, bool with_bias = true) {
  store.add(prefix + ".w", init::he_normal<T>({out, in, k, k}, rng));
  if (with_bias) store.add(prefix + ".b", Tensor<T>({1, out, 1, 1}));
}

}  // namespace usseg
