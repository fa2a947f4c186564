#pragma once

// SGD with momentum, step learning-rate decay and the epoch training loop.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "usseg/checkpoint.hpp"
#include "usseg/dataset.hpp"
#include "usseg/model.hpp"

namespace usseg {

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t batch_size = 2;
  std::size_t epochs = 100;
  std::size_t lr_decay_epochs = 10;
  double lr_decay_divisor = 10.0;
  std::uint64_t seed = 1;
  std::size_t max_steps = 0;  // 0: no cap
  double clip_norm = 0.0;     // 0: off
  std::size_t workers = 1;

  void validate() const {
    if (!(lr > 0) || !(momentum >= 0) || !(weight_decay >= 0) || !(lr_decay_divisor > 0))
      throw ArgumentError("learning rate, momentum, weight decay and decay divisor must be positive");
    if (batch_size == 0) throw ArgumentError("batch size must be >= 1");
    if (lr_decay_epochs == 0) throw ArgumentError("lr_decay_epochs must be >= 1");
    if (clip_norm < 0) throw ArgumentError("clip_norm must be >= 0");
    if (workers == 0) throw ArgumentError("workers must be >= 1");
  }
  bool operator==(const TrainConfig&) const = default;
};

// lr = base / divisor^floor(epoch / every).
inline double lr_schedule(std::size_t epoch, const TrainConfig& cfg = {}) {
  return cfg.lr / std::pow(cfg.lr_decay_divisor, double(epoch / cfg.lr_decay_epochs));
}

// v <- momentum * v + (g + wd * p);  p <- p - lr * v
template <class T>
void sgd_update(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& velocity, double lr, double momentum,
                double weight_decay) {
  if (!(param.shape() == grad.shape()) || !(param.shape() == velocity.shape()))
    throw ShapeError("sgd dims mismatch: param " + param.shape().str() + ", grad " + grad.shape().str() +
                     ", momentum " + velocity.shape().str());
  const T m = T(momentum), wd = T(weight_decay), r = T(lr);
  for (std::size_t i = 0; i < param.numel(); ++i) {
    velocity[i] = m * velocity[i] + (grad[i] + wd * param[i]);
    param[i] -= r * velocity[i];
  }
}

template <class T>
void sgd_step(ParamStore<T>& params, double lr, double momentum, double weight_decay) {
  for (auto& e : params.entries()) sgd_update(e.value, e.grad, e.momentum, lr, momentum, weight_decay);
}

// Rescales gradients to the given global L2 norm when above it; returns the
// norm before clipping.
template <class T>
double clip_global_norm(ParamStore<T>& params, double max_norm) {
  double sq = 0;
  for (const auto& e : params.entries())
    for (std::size_t i = 0; i < e.grad.numel(); ++i) sq += double(e.grad[i]) * double(e.grad[i]);
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T s = T(max_norm / norm);
    for (auto& e : params.entries())
      for (std::size_t i = 0; i < e.grad.numel(); ++i) e.grad[i] *= s;
  }
  return norm;
}

struct StepLog {
  std::size_t step = 0, epoch = 0;
  double lr = 0;
  LossValues loss;
};

inline std::string loss_log_header() { return "step,epoch,lr,total,rpn_obj,rpn_box,cls,box,mask"; }

inline std::string format_step(const StepLog& s) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", s.step, s.epoch, s.lr, s.loss.total,
                s.loss.rpn_objectness, s.loss.rpn_box, s.loss.cls, s.loss.box, s.loss.mask);
  return buf;
}

namespace detail {

inline void require_finite(const LossValues& v, const std::string& image_id, std::size_t step) {
  const std::pair<const char*, double> parts[] = {{"rpn_obj", v.rpn_objectness}, {"rpn_box", v.rpn_box},
                                                  {"cls", v.cls},               {"box", v.box},
                                                  {"mask", v.mask}};
  for (const auto& [name, value] : parts)
    if (!std::isfinite(value))
      throw NonFiniteLossError("non-finite loss component '" + std::string(name) + "' (" + std::to_string(value) +
                               ") at step " + std::to_string(step) + " on image " + image_id);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return a * 0x9E3779B97F4A7C15ULL ^ (b + 0x632BE59BD9B4E019ULL); }

// Forward and backward of one image on its own tape; the sampling rng is a
// pure function of (seed, step, slot) so worker count cannot change it.
inline LossValues image_step(const ParamStore<float>& params, const ModelConfig& mcfg, const AnnotatedImage& img,
                             std::uint64_t seed, std::size_t step, std::size_t slot, std::vector<Tensor<float>>& grads) {
  Tape<float> tape;
  Bound<float> bound(tape, params);
  Rng rng(mix_seed(mix_seed(seed, step), slot));
  const auto loss = image_loss(bound, mcfg, img.image, img.instances, rng);
  const LossValues v = loss.values(tape);
  require_finite(v, img.id, step);
  tape.backward(loss.total);
  grads.clear();
  for (const auto& e : params.entries()) grads.push_back(tape.grad(bound[e.name]));
  return v;
}

}  // namespace detail

struct TrainCallbacks {
  std::function<void(const StepLog&)> on_step;
  std::function<void(std::size_t epoch, const ParamStore<float>&)> on_epoch_end;
};

// Runs the configured epochs (or until max_steps). Images are visited in a
// per-epoch shuffled order drawn from the seed; each step averages the
// gradients of its batch in image order, so runs replay exactly.
inline std::vector<StepLog> train_loop(const TrainConfig& cfg, const ModelConfig& mcfg, ParamStore<float>& params,
                                       const std::vector<AnnotatedImage>& data, const TrainCallbacks& cb = {}) {
  cfg.validate();
  if (data.empty()) throw ArgumentError("training dataset is empty");
  std::vector<StepLog> log;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.max_steps && step >= cfg.max_steps) break;
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(detail::mix_seed(cfg.seed, 0xE90C + epoch));
    shuffle_rng.shuffle(order);
    const double lr = lr_schedule(epoch, cfg);
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      if (cfg.max_steps && step >= cfg.max_steps) break;
      const std::size_t n = std::min(cfg.batch_size, order.size() - b);
      std::vector<std::vector<Tensor<float>>> grads(n);
      std::vector<LossValues> losses(n);
      std::vector<std::exception_ptr> errors(n);
      auto run = [&](std::size_t k) {
        try {
          losses[k] = detail::image_step(params, mcfg, data[order[b + k]], cfg.seed, step, k, grads[k]);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      };
      if (cfg.workers > 1 && n > 1) {
        for (std::size_t k0 = 0; k0 < n; k0 += cfg.workers) {
          std::vector<std::thread> pool;
          for (std::size_t k = k0; k < std::min(n, k0 + cfg.workers); ++k) pool.emplace_back(run, k);
          for (auto& t : pool) t.join();
        }
      } else {
        for (std::size_t k = 0; k < n; ++k) run(k);
      }
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);

      params.zero_grads();
      const float inv = 1.0f / float(n);
      StepLog s{step, epoch, lr, {}};
      for (std::size_t k = 0; k < n; ++k) {
        auto& entries = params.entries();
        for (std::size_t i = 0; i < entries.size(); ++i)
          for (std::size_t j = 0; j < entries[i].grad.numel(); ++j) entries[i].grad[j] += inv * grads[k][i][j];
        s.loss.rpn_objectness += losses[k].rpn_objectness / double(n);
        s.loss.rpn_box += losses[k].rpn_box / double(n);
        s.loss.cls += losses[k].cls / double(n);
        s.loss.box += losses[k].box / double(n);
        s.loss.mask += losses[k].mask / double(n);
        s.loss.total += losses[k].total / double(n);
      }
      if (cfg.clip_norm > 0) clip_global_norm(params, cfg.clip_norm);
      sgd_step(params, lr, cfg.momentum, cfg.weight_decay);
      log.push_back(s);
      if (cb.on_step) cb.on_step(s);
      ++step;
    }
    if (cb.on_epoch_end) cb.on_epoch_end(epoch, params);
  }
  return log;
}

// Training with on-disk outputs: loss.csv (append-only), a checkpoint
// directory per epoch (epoch_NNNN) and `final` after the last step.
inline std::vector<StepLog> train_to_dir(const TrainConfig& cfg, const ModelConfig& mcfg, ParamStore<float>& params,
                                         const std::vector<AnnotatedImage>& data, const std::string& out_dir,
                                         std::function<void(const StepLog&)> progress = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::ofstream log(fs::path(out_dir) / "loss.csv", std::ios::binary | std::ios::app);
  if (!log) throw DataError("cannot write loss log in " + out_dir);
  log << loss_log_header() << "\n";
  TrainCallbacks cb;
  cb.on_step = [&](const StepLog& s) {
    log << format_step(s) << "\n";
    log.flush();
    if (progress) progress(s);
  };
  cb.on_epoch_end = [&](std::size_t epoch, const ParamStore<float>& p) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%04zu", epoch);
    checkpoint_save(p, (fs::path(out_dir) / name).string());
  };
  auto steps = train_loop(cfg, mcfg, params, data, cb);
  checkpoint_save(params, (fs::path(out_dir) / "final").string());
  return steps;
}

}  // namespace usseg
