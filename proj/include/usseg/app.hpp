#pragma once

// Subcommand bodies for the usseg executable. Each returns a process exit
// code and writes human output to `out`; argument parsing lives in tools/.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "usseg/usseg.hpp"
#include "usseg/checks.hpp"

namespace usseg::app {

enum Exit : int { kOk = 0, kFailure = 1, kUsage = 2, kDataError = 3 };

inline constexpr const char* kRunConfigName = "run.cfg";
// Reference parameter count for the VGG-19 configuration, in millions.
inline constexpr double kReferenceParamsM = 25.3;

namespace detail {

namespace fs = std::filesystem;

// The run config saved by `train` sits in the checkpoint directory or its parent.
inline RunConfig config_for_checkpoint(const std::string& ckpt) {
  for (const fs::path dir : {fs::path(ckpt), fs::path(ckpt).parent_path()}) {
    const fs::path p = dir / kRunConfigName;
    if (fs::exists(p)) return load_run_config(p.string());
  }
  throw DataError("no " + std::string(kRunConfigName) + " next to checkpoint " + ckpt +
                  " (expected in the checkpoint directory or its parent, as written by `train`)");
}

inline ParamStore<float> load_model(const std::string& ckpt, const ModelConfig& mc) {
  ParamStore<float> params = build_model<float>(mc, 0);
  checkpoint_load_into(params, ckpt);
  return params;
}

inline std::vector<AnnotatedImage> load_resized(const std::string& dir, std::size_t size) {
  if (!fs::is_directory(dir)) throw DataError("data directory " + dir + " does not exist");
  auto data = load_dataset(dir);
  if (data.empty()) throw DataError("no annotation files (*.json) in " + dir);
  for (auto& a : data) a = resize_sample(a, size, size);
  return data;
}

inline std::string millions(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2fM", v / 1e6);
  return buf;
}

inline std::string giga(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2fG", v / 1e9);
  return buf;
}

}  // namespace detail

// Maps library errors onto exit codes with a one-line message.
template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const NonFiniteLossError& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
}

inline int cmd_check(std::ostream& out, const std::string& sabotage = "none", const std::string& filter = "") {
  const auto fault = parse_fault(sabotage);
  if (!fault) throw ArgumentError("unknown fault '" + sabotage + "' (none, conv-grad, sigmoid-grad, nms-order, ap-interp)");
  ScopedFault scoped(*fault);
  if (*fault != Fault::none) out << "sabotage active: " << sabotage << "\n";
  const auto s = checks::run_all(out, filter);
  out << s.passed << " passed, " << s.failed << " failed in " << std::fixed << std::setprecision(1) << s.seconds << "s\n";
  return s.failed == 0 && s.passed > 0 ? kOk : kFailure;
}

inline int cmd_gen_synth(std::ostream& out, const std::string& config, const std::string& out_dir, std::size_t count,
                         bool split) {
  if (count == 0) throw ArgumentError("--count must be >= 1");
  const RunConfig cfg = load_run_config(config);
  const auto data = synth_generate(cfg.synth, count);
  if (split) {
    const Split s = split_dataset(data, cfg.train_fraction, cfg.synth.seed);
    for (const auto& a : s.train) save_labelme(a, (detail::fs::path(out_dir) / "train").string());
    for (const auto& a : s.test) save_labelme(a, (detail::fs::path(out_dir) / "test").string());
    out << "wrote " << s.train.size() << " training and " << s.test.size() << " test images to " << out_dir << "\n";
  } else {
    for (const auto& a : data) save_labelme(a, out_dir);
    out << "wrote " << data.size() << " images to " << out_dir << "\n";
  }
  return kOk;
}

inline int cmd_train(std::ostream& out, const std::string& config, const std::string& data_dir, const std::string& out_dir,
                     std::size_t workers) {
  RunConfig cfg = load_run_config(config);
  if (workers > 0) cfg.train.workers = workers;
  const auto data = detail::load_resized(data_dir, cfg.image_size);
  detail::fs::create_directories(out_dir);
  {
    std::ofstream f(detail::fs::path(out_dir) / kRunConfigName);
    f << cfg.serialize();
  }
  ParamStore<float> params = build_model<float>(cfg.model, cfg.train.seed);
  out << "training on " << data.size() << " images, " << params.parameter_count() << " parameters\n";
  const auto log = train_to_dir(cfg.train, cfg.model, params, data, out_dir, [&](const StepLog& s) {
    if (s.step % 10 == 0) out << format_step(s) << "\n" << std::flush;
  });
  if (!log.empty()) out << "final: " << format_step(log.back()) << "\n";
  out << "checkpoint: " << (detail::fs::path(out_dir) / "final").string() << "\n";
  return kOk;
}

inline int cmd_eval(std::ostream& out, const std::string& ckpt, const std::string& data_dir, const std::string& report) {
  const RunConfig cfg = detail::config_for_checkpoint(ckpt);
  const auto params = detail::load_model(ckpt, cfg.model);
  const auto data = detail::load_resized(data_dir, cfg.image_size);
  std::map<std::string, std::vector<Detection>> preds;
  for (const auto& a : data) preds[a.id] = predict_image(params, cfg.model, a.image);
  const auto r = evaluate(preds, ground_truth(data));
  const std::string table = format_table(r.box, "box") + "\n" + format_table(r.mask, "mask");
  std::ofstream f(report, std::ios::binary);
  if (!f) throw DataError("cannot write report " + report);
  f << format_key_values(r.box) << format_key_values(r.mask);
  std::ofstream t(report + ".table", std::ios::binary);
  t << table;
  out << table;
  return kOk;
}

inline int cmd_predict(std::ostream& out, const std::string& ckpt, const std::string& image, const std::string& out_path) {
  const RunConfig cfg = detail::config_for_checkpoint(ckpt);
  const auto params = detail::load_model(ckpt, cfg.model);
  const GrayImage gray = read_pgm(image);
  const auto input = kernels::resize_bilinear_forward(to_tensor(gray), cfg.image_size, cfg.image_size);
  const auto dets = rescale_detections(predict_image(params, cfg.model, input), gray.height, gray.width);
  write_ppm(out_path, render_overlay(gray, dets));
  for (const auto& d : dets)
    out << class_name(d.label) << " " << std::fixed << std::setprecision(3) << d.score << " [" << d.box.x1 << ", "
        << d.box.y1 << ", " << d.box.x2 << ", " << d.box.y2 << "]\n";
  out << dets.size() << " detections, overlay " << out_path << "\n";
  return kOk;
}

// Parameters and multiply-accumulates for the configured model and its
// ablations, plus the full-width model next to the reference figure.
inline int cmd_bench(std::ostream& out, const std::string& config) {
  const RunConfig cfg = load_run_config(config);
  const std::size_t S = cfg.image_size;
  struct Row {
    std::string name;
    ModelConfig mc;
  };
  std::vector<Row> rows;
  auto variant = [&](std::string name, ModelConfig mc) { rows.push_back({std::move(name), mc}); };
  ModelConfig base = cfg.model;
  variant("configured", base);
  ModelConfig fpn = base;
  fpn.pyramid_mode = PyramidMode::classic_fpn;
  fpn.use_slcf = fpn.use_sag = false;
  variant("classic_fpn, no attention", fpn);
  ModelConfig no_att = base;
  no_att.pyramid_mode = PyramidMode::skip_concat;
  no_att.use_slcf = no_att.use_sag = false;
  variant("skip_concat, no attention", no_att);
  ModelConfig full = base;
  full.pyramid_mode = PyramidMode::skip_concat;
  full.use_slcf = full.use_sag = true;
  variant("skip_concat + SLCF + SAG", full);
  ModelConfig vgg = full;
  vgg.width_divisor = 1;
  variant("full width (divisor 1)", vgg);

  out << "input " << S << "x" << S << ", MACs of the dense path (RoI heads excluded)\n";
  out << std::left << std::setw(30) << "configuration" << std::right << std::setw(8) << "div" << std::setw(12) << "params"
      << std::setw(12) << "MACs" << "\n";
  for (const auto& r : rows) {
    const auto params = build_model<float>(r.mc, 1);
    const auto c = count_params_flops(params, r.mc, S, S);
    out << std::left << std::setw(30) << r.name << std::right << std::setw(8) << r.mc.width_divisor << std::setw(12)
        << detail::millions(double(c.parameters)) << std::setw(12) << detail::giga(double(c.conv_macs + c.dense_macs))
        << "\n";
    if (&r == &rows.back())
      out << std::left << std::setw(30) << "  reference VGG-19 model" << std::right << std::setw(8) << "" << std::setw(11)
          << std::fixed << std::setprecision(2) << kReferenceParamsM << "M" << std::setw(12) << "n/a" << "\n";
  }
  return kOk;
}

}  // namespace usseg::app
