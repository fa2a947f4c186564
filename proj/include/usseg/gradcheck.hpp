#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "usseg/params.hpp"

namespace usseg {

struct GradCheckOptions {
  double step = 1e-6;          // central-difference step, sized for double
  std::size_t samples = 100;   // coordinates per tensor (all when fewer)
  std::uint64_t seed = 7;
  double abs_floor = 1e-6;     // denominator floor for the relative error
};

struct GradCheckItem {
  std::string name;
  std::size_t coords = 0;
  double rel = 0;
  double max_abs = 0;
};

struct GradCheckReport {
  std::vector<GradCheckItem> items;

  double max_rel() const {
    double m = 0;
    for (const auto& i : items) m = std::max(m, i.rel);
    return m;
  }
  std::size_t min_coords() const {
    std::size_t m = items.empty() ? 0 : items.front().coords;
    for (const auto& i : items) m = std::min(m, i.coords);
    return m;
  }
  bool passed(double tolerance) const { return !items.empty() && max_rel() < tolerance; }
};

template <class T>
using LossBuilder = std::function<Var(Tape<T>&, const Bound<T>&)>;

// Compares reverse-mode gradients of a scalar loss against central
// differences, per parameter tensor. The relative error of a tensor is taken
// over its sampled coordinates as ||a - n|| / max(||a||, ||n||, abs_floor);
// a per-coordinate ratio would be dominated by rounding wherever a single
// true gradient happens to sit near zero.
template <class T>
GradCheckReport finite_diff_check(ParamStore<T>& params, const LossBuilder<T>& build,
                                  const GradCheckOptions& opt = {}) {
  std::vector<Tensor<T>> analytic;
  {
    Tape<T> tape;
    Bound<T> bound(tape, params);
    Var loss = build(tape, bound);
    if (tape.value(loss).numel() != 1)
      throw ArgumentError("finite_diff_check needs a scalar loss, got " + tape.shape(loss).str());
    tape.backward(loss);
    for (const auto& e : params.entries()) analytic.push_back(tape.grad(bound[e.name]));
  }
  auto eval = [&]() {
    Tape<T> tape;
    Bound<T> bound(tape, params);
    return static_cast<double>(tape.value(build(tape, bound))[0]);
  };

  Rng rng(opt.seed);
  GradCheckReport report;
  auto& entries = params.entries();
  for (std::size_t p = 0; p < entries.size(); ++p) {
    Tensor<T>& value = entries[p].value;
    std::vector<std::size_t> coords(value.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > opt.samples) {
      for (std::size_t i = 0; i < opt.samples; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.next_u64() % (coords.size() - i));
        std::swap(coords[i], coords[j]);
      }
      coords.resize(opt.samples);
    }
    GradCheckItem item{entries[p].name, coords.size(), 0, 0};
    double diff2 = 0, a2 = 0, n2 = 0;
    for (std::size_t c : coords) {
      const T saved = value[c];
      value[c] = static_cast<T>(double(saved) + opt.step);
      const double up = eval();
      value[c] = static_cast<T>(double(saved) - opt.step);
      const double down = eval();
      value[c] = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = double(analytic[p][c]);
      item.max_abs = std::max(item.max_abs, std::abs(a - numeric));
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
    item.rel = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), opt.abs_floor});
    report.items.push_back(item);
  }
  return report;
}

}  // namespace usseg
