#pragma once

// Line-oriented `key=value` run configuration. Blank lines and lines starting
// with '#' are ignored; unknown or repeated keys are errors.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "usseg/synth.hpp"
#include "usseg/trainer.hpp"

namespace usseg {

struct RunConfig {
  TrainConfig train;
  ModelConfig model;
  SynthOptions synth;
  std::size_t image_size = 160;
  double train_fraction = 0.8;

  bool operator==(const RunConfig& o) const {
    return serialize() == o.serialize();
  }
  std::string serialize() const;
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s) {
  double v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ParseError("not a number: '" + s + "'");
  return v;
}

inline std::uint64_t parse_uint(const std::string& s) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ParseError("not a non-negative integer: '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "on") return true;
  if (s == "false" || s == "0" || s == "off") return false;
  throw ParseError("not a boolean (true/false): '" + s + "'");
}

inline std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, ',')) out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

struct ConfigKey {
  const char* name;
  const char* doc;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class F>
ConfigKey uint_key(const char* name, const char* doc, F field) {
  return {name, doc, [=](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); },
          [=](RunConfig& c, const std::string& v) { field(c) = static_cast<std::remove_reference_t<decltype(field(c))>>(parse_uint(v)); }};
}

template <class F>
ConfigKey double_key(const char* name, const char* doc, F field) {
  return {name, doc, [=](const RunConfig& c) { return fmt_double(field(const_cast<RunConfig&>(c))); },
          [=](RunConfig& c, const std::string& v) { field(c) = parse_double(v); }};
}

template <class F>
ConfigKey bool_key(const char* name, const char* doc, F field) {
  return {name, doc, [=](const RunConfig& c) { return std::string(field(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [=](RunConfig& c, const std::string& v) { field(c) = parse_bool(v); }};
}

inline ConfigKey count_key(const char* name, const char* doc, int label) {
  const auto i = std::size_t(label - 1);
  return {name, doc,
          [=](const RunConfig& c) { return std::to_string(c.synth.counts[i].lo) + "," + std::to_string(c.synth.counts[i].hi); },
          [=](RunConfig& c, const std::string& v) {
            const auto parts = split_commas(v);
            if (parts.size() != 2) throw ParseError("expected 'lo,hi', got '" + v + "'");
            c.synth.counts[i] = {int(parse_uint(trim(parts[0]))), int(parse_uint(trim(parts[1])))};
          }};
}

}  // namespace detail

// Every accepted key, in serialization order.
inline const std::vector<detail::ConfigKey>& config_keys() {
  using namespace detail;
  static const std::vector<ConfigKey> keys = {
      uint_key("seed", "training seed (shuffling, sampling, initialization)", [](RunConfig& c) -> auto& { return c.train.seed; }),
      uint_key("epochs", "number of epochs", [](RunConfig& c) -> auto& { return c.train.epochs; }),
      uint_key("max_steps", "step cap, 0 for none", [](RunConfig& c) -> auto& { return c.train.max_steps; }),
      uint_key("batch_size", "images per step", [](RunConfig& c) -> auto& { return c.train.batch_size; }),
      double_key("lr", "base learning rate", [](RunConfig& c) -> auto& { return c.train.lr; }),
      double_key("momentum", "SGD momentum", [](RunConfig& c) -> auto& { return c.train.momentum; }),
      double_key("weight_decay", "L2 weight decay folded into the gradient", [](RunConfig& c) -> auto& { return c.train.weight_decay; }),
      uint_key("lr_decay_epochs", "epochs between learning-rate decays", [](RunConfig& c) -> auto& { return c.train.lr_decay_epochs; }),
      double_key("lr_decay_divisor", "learning-rate divisor per decay", [](RunConfig& c) -> auto& { return c.train.lr_decay_divisor; }),
      double_key("clip_norm", "global gradient-norm clip, 0 for off", [](RunConfig& c) -> auto& { return c.train.clip_norm; }),
      uint_key("image_size", "square input size (multiple of 32)", [](RunConfig& c) -> auto& { return c.image_size; }),
      double_key("train_fraction", "fraction of groups used for training by split", [](RunConfig& c) -> auto& { return c.train_fraction; }),
      uint_key("width_divisor", "channel-width divisor for all modules", [](RunConfig& c) -> auto& { return c.model.width_divisor; }),
      {"pyramid", "skip_concat or classic_fpn", [](const RunConfig& c) { return to_string(c.model.pyramid_mode); },
       [](RunConfig& c, const std::string& v) {
         auto m = parse_pyramid_mode(v);
         if (!m) throw ParseError("pyramid must be skip_concat or classic_fpn, got '" + v + "'");
         c.model.pyramid_mode = *m;
       }},
      {"skip_target", "P3 or P2", [](const RunConfig& c) { return to_string(c.model.skip_target); },
       [](RunConfig& c, const std::string& v) {
         auto t = parse_skip_target(v);
         if (!t) throw ParseError("skip_target must be P3 or P2, got '" + v + "'");
         c.model.skip_target = *t;
       }},
      bool_key("slcf", "enable the contrast-feature block", [](RunConfig& c) -> auto& { return c.model.use_slcf; }),
      bool_key("sag", "enable the attention gate", [](RunConfig& c) -> auto& { return c.model.use_sag; }),
      bool_key("slcf_shared_kernel", "one kernel per branch for both convolutions", [](RunConfig& c) -> auto& { return c.model.slcf_shared_kernel; }),
      {"anchor_sizes", "four anchor sizes for strides 4,8,16,32",
       [](const RunConfig& c) {
         std::string s;
         for (float a : c.model.anchor_sizes) s += (s.empty() ? "" : ",") + fmt_double(a);
         return s;
       },
       [](RunConfig& c, const std::string& v) {
         const auto parts = split_commas(v);
         if (parts.size() != 4) throw ParseError("anchor_sizes needs 4 values, got '" + v + "'");
         for (std::size_t i = 0; i < 4; ++i) {
           const double a = parse_double(trim(parts[i]));
           if (!(a > 0)) throw ParseError("anchor sizes must be positive");
           c.model.anchor_sizes[i] = float(a);
         }
       }},
      double_key("score_threshold", "minimum detection score", [](RunConfig& c) -> auto& { return c.model.score_threshold; }),
      double_key("nms_threshold", "per-class NMS IoU threshold", [](RunConfig& c) -> auto& { return c.model.nms_threshold; }),
      double_key("mask_threshold", "mask binarization threshold", [](RunConfig& c) -> auto& { return c.model.mask_threshold; }),
      uint_key("max_detections", "detections kept per image", [](RunConfig& c) -> auto& { return c.model.max_detections; }),
      uint_key("proposals_train", "post-NMS proposals per training image", [](RunConfig& c) -> auto& { return c.model.train_proposals.post_nms_topk; }),
      uint_key("proposals_eval", "post-NMS proposals at inference", [](RunConfig& c) -> auto& { return c.model.eval_proposals.post_nms_topk; }),
      uint_key("synth_seed", "synthetic corpus seed", [](RunConfig& c) -> auto& { return c.synth.seed; }),
      uint_key("synth_height", "synthetic image height", [](RunConfig& c) -> auto& { return c.synth.height; }),
      uint_key("synth_width", "synthetic image width", [](RunConfig& c) -> auto& { return c.synth.width; }),
      count_key("synth_nerve", "nerve instances per image, lo,hi", 1),
      count_key("synth_muscle", "muscle instances per image, lo,hi", 2),
      count_key("synth_vein", "vein instances per image, lo,hi", 3),
      count_key("synth_artery", "artery instances per image, lo,hi", 4),
      double_key("synth_speckle", "multiplicative speckle standard deviation", [](RunConfig& c) -> auto& { return c.synth.speckle; }),
      uint_key("synth_frames_per_group", "frames sharing one layout", [](RunConfig& c) -> auto& { return c.synth.frames_per_group; }),
  };
  return keys;
}

inline std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& k : config_keys()) out += std::string(k.name) + "=" + k.get(*this) + "\n";
  return out;
}

inline void validate(const RunConfig& c) {
  c.train.validate();
  c.synth.validate();
  if (c.image_size == 0 || c.image_size % 32 != 0) throw ArgumentError("image_size must be a positive multiple of 32");
  if (c.model.width_divisor == 0) throw ArgumentError("width_divisor must be >= 1");
  if (!(c.train_fraction > 0 && c.train_fraction < 1)) throw ArgumentError("train_fraction must lie in (0, 1)");
}

inline RunConfig parse_run_config(const std::string& text, const std::string& source = "config") {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError(where + ": expected key=value");
    const std::string key = detail::trim(t.substr(0, eq)), value = detail::trim(t.substr(eq + 1));
    const auto& keys = config_keys();
    auto it = std::find_if(keys.begin(), keys.end(), [&](const auto& k) { return key == k.name; });
    if (it == keys.end()) throw ParseError(where + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ParseError(where + ": duplicate key '" + key + "'");
    try {
      it->set(cfg, value);
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + key + ": " + e.what());
    }
  }
  try {
    validate(cfg);
  } catch (const ArgumentError& e) {
    throw ParseError(source + ": " + e.what());
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path);
}

}  // namespace usseg
