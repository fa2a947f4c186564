// Acceptance run: one PASS/FAIL line per criterion, details indented below.
// Exit status is nonzero when any gating criterion fails (7 is a report).

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <sstream>

#include "usseg/checks.hpp"
#include "oracles.hpp"

using namespace usseg;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string summary;
  std::string details;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1: the whole check suite, timed.
Verdict gradient_integrity() {
  std::ostringstream rows;
  const auto s = checks::run_all(rows);
  const bool ok = s.failed == 0 && s.passed > 0 && s.seconds < 300.0;
  return {ok, std::to_string(s.passed) + " checks passed, " + std::to_string(s.failed) + " failed, " + fmt("%.1fs", s.seconds) + " (limit 300s)",
          rows.str()};
}

// 2: level sizes at 640, SLCF width at full width, upsampler sizes.
Verdict shape_laws() {
  std::ostringstream d;
  bool ok = true;
  const std::size_t sizes[4] = {160, 80, 40, 20};
  {
    ModelConfig mc;  // full width
    ParamStore<float> params;
    Rng init(1);
    add_backbone_params(params, mc.backbone(), init);
    add_pyramid_params(params, mc.pyramid(), init);
    Tape<float> t;
    Bound<float> p(t, params, false);
    const auto c = backbone_forward(p, mc.backbone(), ad::constant(t, Tensor<float>({1, 1, 640, 640})));
    const auto py = pyramid_forward(p, mc.pyramid(), c);
    const Var cs[4] = {c.c2, c.c3, c.c4, c.c5}, ps[4] = {py.p2, py.p3, py.p4, py.p5};
    d << "640x640, divisor 1:";
    for (std::size_t l = 0; l < 4; ++l) {
      const Shape a = t.shape(cs[l]), b = t.shape(ps[l]);
      ok = ok && a.h == sizes[l] && a.w == sizes[l] && b.h == sizes[l] && b.w == sizes[l];
      d << " C" << l + 2 << "=" << a.h << "x" << a.w << " P" << l + 2 << "=" << b.h << "x" << b.w;
    }
    d << "\n";
  }
  {
    const SlcfConfig cfg = slcf_config_for(1);
    const auto params = build_slcf<float>(3, 1);
    Rng rng(4);
    Tape<float> t;
    Bound<float> p(t, params, false);
    const auto y = t.shape(slcf_forward(p, cfg, ad::constant(t, oracle::random<float>({1, cfg.channels, 24, 24}, rng))));
    ok = ok && y.c == 512;
    d << "SLCF at divisor 1: " << cfg.channels << " in, " << y.c << " out\n";
  }
  std::size_t evaluations = 0, networks = 0;
  Rng rng(5);
  for (auto mode : {PyramidMode::skip_concat, PyramidMode::classic_fpn})
    for (auto target : {SkipTarget::P3, SkipTarget::P2}) {
      if (mode == PyramidMode::classic_fpn && target == SkipTarget::P2) continue;
      ModelConfig mc;
      mc.width_divisor = 16;
      mc.pyramid_mode = mode;
      mc.skip_target = target;
      ParamStore<float> params;
      Rng init(6);
      add_backbone_params(params, mc.backbone(), init);
      add_pyramid_params(params, mc.pyramid(), init);
      for (int trial = 0; trial < 12; ++trial) {
        // every upsampler kernel on a random input size
        const std::size_t i = std::size_t(rng.uniform_int(1, 40));
        for (const auto& e : topology(mc.pyramid())) {
          std::size_t size = i;
          for (std::size_t st = 0; st < e.kernels.size(); ++st) {
            const std::size_t k = e.kernels[st];
            const Tensor<float>& w = params.value(edge_param(e, st) + ".w");
            const auto y = kernels::tconv2d_forward(Tensor<float>({1, w.shape().n, size, size}), w,
                                                    static_cast<const Tensor<float>*>(nullptr), k, 0);
            const std::size_t expect = k * (size - 1) - 2 * 0 + k;
            if (y.shape().h != expect || y.shape().w != expect) {
              ok = false;
              d << "mismatch: " << edge_param(e, st) << " at " << size << "\n";
            }
            size = expect;
            ++evaluations;
          }
        }
        // and whole networks on random multiples of 32
        const std::size_t S = 32 * std::size_t(rng.uniform_int(1, 8)), W = 32 * std::size_t(rng.uniform_int(1, 8));
        Tape<float> t;
        Bound<float> p(t, params, false);
        const auto c = backbone_forward(p, mc.backbone(), ad::constant(t, Tensor<float>({1, 1, S, W})));
        const auto py = pyramid_forward(p, mc.pyramid(), c);
        const Var cs[4] = {c.c2, c.c3, c.c4, c.c5}, ps[4] = {py.p2, py.p3, py.p4, py.p5};
        for (std::size_t l = 0; l < 4; ++l) {
          const Shape a = t.shape(cs[l]), b = t.shape(ps[l]);
          if (a.h != S >> (l + 2) || a.w != W >> (l + 2) || b.h != a.h || b.w != a.w) {
            ok = false;
            d << "level mismatch at " << S << "x" << W << " (" << to_string(mode) << ")\n";
          }
        }
        ++networks;
      }
    }
  d << evaluations << " upsampler evaluations, " << networks << " networks at random sizes\n";
  return {ok, "levels {160,80,40,20} at 640, SLCF 512 channels, upsampler sizes exact", d.str()};
}

// 3: constant input, interior of the SLCF output.
Verdict slcf_zero_contrast() {
  const std::size_t div = 8, S = 40, r = 16;
  const SlcfConfig cfg = slcf_config_for(div);
  Rng rng(7);
  double worst = 0;
  for (std::uint64_t draw = 0; draw < 50; ++draw) {
    const auto params = build_slcf<float>(500 + draw, div);
    Tape<float> t;
    Bound<float> p(t, params, false);
    const float v = float(rng.normal() * 3);
    const auto& y = t.value(slcf_forward(p, cfg, ad::constant(t, Tensor<float>::constant({1, cfg.channels, S, S}, v))));
    for (std::size_t c = 0; c < y.shape().c; ++c)
      for (std::size_t i = r; i < S - r; ++i)
        for (std::size_t j = r; j < S - r; ++j) worst = std::max(worst, double(std::abs(y.at(0, c, i, j))));
  }
  return {worst < 1e-5, "50 parameter draws, max interior |v| = " + fmt("%.3g", worst) + " (limit 1e-5)", ""};
}

// 4: gate of exactly one half, range, scalar recomputation.
Verdict sag_contract() {
  std::ostringstream d;
  bool ok = true;
  Rng rng(8);
  {
    const std::size_t C = 512;
    ParamStore<float> zero = build_sag<float>(1, C);
    for (auto& e : zero.entries()) e.value.fill(0.0f);
    const auto x = oracle::random<float>({1, C, 6, 6}, rng, 3.0);
    Tape<float> t;
    Bound<float> p(t, zero, false);
    const auto& y = t.value(sag_forward(p, sag_config_for(C), ad::constant(t, x)));
    std::size_t exact = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) exact += y[i] == 0.5f * x[i];
    ok = ok && exact == x.numel();
    d << "zero gate: " << exact << "/" << x.numel() << " outputs exactly half the input\n";
  }
  double worst = 0;
  bool in_range = true;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t C = 512;
    const auto params = build_sag<double>(100 + std::uint64_t(trial), C);
    const std::size_t H = std::size_t(rng.uniform_int(1, 9)), W = std::size_t(rng.uniform_int(1, 9));
    const auto x = oracle::random<double>({1, C, H, W}, rng, rng.uniform(0.1, 5.0));
    Tape<double> t;
    Bound<double> p(t, params, false);
    const auto w = t.value(sag_weights(p, sag_config_for(C), ad::constant(t, x)));
    const auto& w1 = params.value("sag.fc1.w");
    const auto& b1 = params.value("sag.fc1.b");
    const auto& w2 = params.value("sag.fc2.w");
    const auto& b2 = params.value("sag.fc2.b");
    const std::size_t hidden = w1.shape().n;
    std::vector<double> avg(C), mx(C);
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0, m = -1e300;
      for (std::size_t i = 0; i < H * W; ++i) {
        s += x.plane(0, c)[i];
        m = std::max(m, x.plane(0, c)[i]);
      }
      avg[c] = s / double(H * W);
      mx[c] = m;
    }
    auto theta = [&](const std::vector<double>& v, std::size_t out) {
      double acc = b2[out];
      for (std::size_t j = 0; j < hidden; ++j) {
        double h = b1[j];
        for (std::size_t c = 0; c < C; ++c) h += w1[j * C + c] * v[c];
        acc += w2[out * hidden + j] * std::max(0.0, h);
      }
      return acc;
    };
    for (std::size_t c = 0; c < C; ++c) {
      in_range = in_range && w[c] > 0.0 && w[c] < 1.0;
      worst = std::max(worst, std::abs(w[c] - 1.0 / (1.0 + std::exp(-(theta(avg, c) + theta(mx, c))))));
    }
  }
  // the range must also hold in single precision far from the origin
  for (float scale : {1e-4f, 1.0f, 1e2f, 1e5f}) {
    const auto params = build_sag<float>(9, 64);
    Tape<float> t;
    Bound<float> p(t, params, false);
    for (float v : t.value(sag_weights(p, sag_config_for(64), ad::constant(t, oracle::random<float>({1, 64, 4, 4}, rng, scale)))).vec())
      in_range = in_range && v > 0.0f && v < 1.0f;
  }
  ok = ok && in_range && worst < 1e-6;
  d << "50 inputs at 512 channels: max |w - oracle| = " << fmt("%.3g", worst) << ", weights in (0,1): " << (in_range ? "yes" : "no") << "\n";
  return {ok, "zero gate exact, range held, oracle gap " + fmt("%.3g", worst) + " (limit 1e-6)", d.str()};
}

// 5: NMS and AP against brute force.
BinaryMask rect_mask(std::size_t H, std::size_t W, const Box& b) {
  BinaryMask m(H, W);
  for (std::size_t y = std::size_t(b.y1); y < std::size_t(b.y2); ++y)
    for (std::size_t x = std::size_t(b.x1); x < std::size_t(b.x2); ++x) m.at(y, x) = 1;
  return m;
}

Verdict metric_oracles() {
  std::ostringstream d;
  bool ok = true;
  Rng rng(10);
  std::size_t nms_same = 0;
  for (int scene = 0; scene < 200; ++scene) {
    const std::size_t n = std::size_t(rng.uniform_int(0, 50));
    std::vector<Box> boxes;
    std::vector<float> scores;
    for (std::size_t i = 0; i < n; ++i) {
      const float x = float(rng.uniform(0, 100)), y = float(rng.uniform(0, 100));
      boxes.push_back({x, y, x + float(rng.uniform(1, 40)), y + float(rng.uniform(1, 40))});
      scores.push_back(float(rng.uniform_int(0, 10)) / 10.0f);
    }
    const double thr = rng.uniform(0.05, 0.95);
    nms_same += nms(boxes, scores, thr) == oracle::nms(boxes, scores, thr);
  }
  ok = ok && nms_same == 200;
  d << "NMS: " << nms_same << "/200 scenes identical\n";

  // 200 scenes spread over 10 corpora of 20 images each
  const std::size_t S = 32;
  double worst = 0;
  std::size_t compared = 0;
  for (int corpus = 0; corpus < 10; ++corpus) {
    std::map<std::string, std::vector<Detection>> preds;
    std::map<std::string, std::vector<Instance>> truth;
    for (int scene = 0; scene < 20; ++scene) {
      const std::string id = "s" + std::to_string(scene);
      auto& t = truth[id];
      auto& p = preds[id];
      auto box = [&] {
        const float x = float(rng.uniform_int(0, 24)), y = float(rng.uniform_int(0, 24));
        return Box{x, y, x + float(rng.uniform_int(2, 8)), y + float(rng.uniform_int(2, 8))};
      };
      for (int i = rng.uniform_int(0, 4); i > 0; --i) {
        Instance g;
        g.label = rng.uniform_int(1, 3);
        g.box = box();
        g.mask = rect_mask(S, S, g.box);
        t.push_back(g);
      }
      for (const auto& g : t)
        if (rng.uniform() < 0.8) {
          auto j = [&](float v) { return float(std::clamp(double(v) + rng.uniform_int(-2, 2), 0.0, double(S))); };
          Box b{j(g.box.x1), j(g.box.y1), j(g.box.x2), j(g.box.y2)};
          b.x2 = std::max(b.x2, b.x1 + 1);
          b.y2 = std::max(b.y2, b.y1 + 1);
          Detection det{g.label, float(rng.uniform()), b, rect_mask(S, S, b)};
          for (auto& v : det.mask.data)
            if (rng.uniform() < 0.1) v = !v;
          p.push_back(det);
        }
      for (int i = rng.uniform_int(0, 3); i > 0; --i) {
        const Box b = box();
        p.push_back({rng.uniform_int(1, 4), float(rng.uniform()), b, rect_mask(S, S, b)});
      }
    }
    std::vector<GroundTruthImage> gts;
    for (const auto& [id, inst] : truth) gts.push_back({id, inst});
    const auto r = evaluate(preds, gts);
    for (const APReport* rep : {&r.box, &r.mask})
      for (int cls = 1; cls <= kNumClasses; ++cls)
        for (std::size_t k = 0; k < kNumThresholds; ++k) {
          const auto want = oracle::corpus_ap(preds, truth, cls, 0.5 + 0.05 * double(k), rep == &r.mask);
          if (want.has_value() != rep->present(cls)) {
            ok = false;
            continue;
          }
          if (!want) continue;
          worst = std::max(worst, std::abs(*want - rep->at(cls, k)));
          ++compared;
        }
  }
  ok = ok && worst < 1e-9;
  d << "AP: " << compared << " class/threshold/task values over 200 scenes, max gap " << fmt("%.3g", worst) << "\n";
  const double hand = average_precision({{0.9f, true}, {0.8f, false}, {0.7f, true}}, 2);
  ok = ok && hand == 5.0 / 6.0;
  d << "hand example: " << fmt("%.17g", hand) << " vs 5/6 = " << fmt("%.17g", 5.0 / 6.0) << "\n";
  return {ok, "NMS exact on 200 scenes, AP gap " + fmt("%.3g", worst) + " (limit 1e-9), 5/6 example exact", d.str()};
}

TrainConfig toy_train_config() {
  TrainConfig tc;  // lr 0.01, momentum 0.9, weight decay 1e-4, /10 every 10 epochs
  tc.max_steps = 300;
  tc.seed = 1;
  return tc;
}

ModelConfig toy_model_config() {
  ModelConfig mc;
  mc.width_divisor = 4;
  return mc;
}

std::vector<AnnotatedImage> toy_corpus() {
  SynthOptions opts;
  opts.seed = 1;
  opts.height = opts.width = 160;
  return synth_generate(opts, 16);
}

// 6: overfit the 16-image corpus and score it on itself.
Verdict toy_overfit() {
  std::ostringstream d;
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = toy_corpus();
  const auto mc = toy_model_config();
  const auto tc = toy_train_config();
  auto params = build_model<float>(mc, tc.seed);
  TrainCallbacks cb;
  cb.on_step = [&](const StepLog& s) {
    if (s.step % 50 == 0 || s.step + 1 == tc.max_steps) d << "step " << s.step << " lr " << s.lr << " loss " << fmt("%.4f", s.loss.total) << "\n";
  };
  const auto log = train_loop(tc, mc, params, data, cb);
  std::map<std::string, std::vector<Detection>> preds;
  std::size_t covered = 0, instances = 0;
  for (const auto& a : data) {
    preds[a.id] = predict_image(params, mc, a.image);
    for (const auto& g : a.instances) {
      ++instances;
      covered += std::any_of(preds[a.id].begin(), preds[a.id].end(),
                             [&](const Detection& x) { return x.label == g.label && box_iou(x.box, g.box) >= 0.5; });
    }
  }
  const auto r = evaluate(preds, ground_truth(data));
  const double secs = since(t0);
  const double box50 = r.box.class_mean_at(0).value_or(0), mask50 = r.mask.class_mean_at(0).value_or(0);
  d << format_table(r.box, "box (training set)") << format_table(r.mask, "mask (training set)");
  d << "ground-truth instances with a same-class detection at box IoU >= 0.5: " << covered << "/" << instances
    << (covered == instances ? " (met)" : " (not met)") << "\n";
  // Reported, not gated: with 8 steps per epoch the lr is already 1e-3 from step 80.
  const double final_loss = log.empty() ? 0.0 : log.back().loss.total;
  d << "final total loss " << fmt("%.4f", final_loss) << " after " << log.size() << " steps"
    << (final_loss < 0.1 ? " (below 0.1)" : " (0.1 not reached)") << "\n";
  const bool ok = log.size() <= 300 && box50 >= 0.90 && mask50 >= 0.80 && secs < 1800;
  return {ok, "box AP50 " + fmt("%.4f", box50) + " (>= 0.90), mask AP50 " + fmt("%.4f", mask50) + " (>= 0.80), " +
                  std::to_string(log.size()) + " steps, " + fmt("%.0fs", secs) + " (limit 1800s)",
          d.str()};
}

// 7: full model against the classic pyramid on a held-out split.
Verdict ablation_report() {
  std::ostringstream d;
  SynthOptions opts;
  opts.seed = 7;
  opts.height = opts.width = 160;
  const auto corpus = synth_generate(opts, 240);
  const Split split = split_dataset(corpus, 200.0 / 240.0, opts.seed);
  d << split.train.size() << " training images, " << split.test.size() << " test images, 300 steps each\n";
  TrainConfig tc = toy_train_config();
  ModelConfig full = toy_model_config();
  full.pyramid_mode = PyramidMode::skip_concat;
  full.use_slcf = full.use_sag = true;
  ModelConfig fpn = full;
  fpn.pyramid_mode = PyramidMode::classic_fpn;
  fpn.use_slcf = fpn.use_sag = false;
  auto run = [&](const ModelConfig& mc) {
    auto params = build_model<float>(mc, tc.seed);
    train_loop(tc, mc, params, split.train);
    std::map<std::string, std::vector<Detection>> preds;
    for (const auto& a : split.test) preds[a.id] = predict_image(params, mc, a.image);
    return evaluate(preds, ground_truth(split.test));
  };
  const auto a = run(full), b = run(fpn);
  auto side_by_side = [&](const std::string& left, const std::string& right) {
    std::istringstream l(left), r(right);
    std::string x, y;
    while (std::getline(l, x)) {
      std::getline(r, y);
      char buf[160];
      std::snprintf(buf, sizeof buf, "%-44s %s\n", x.c_str(), y.c_str());
      d << buf;
    }
  };
  side_by_side(format_table(a.box, "box, SLCF+SAG+SC"), format_table(b.box, "box, classic FPN"));
  side_by_side(format_table(a.mask, "mask, SLCF+SAG+SC"), format_table(b.mask, "mask, classic FPN"));
  const double da = a.mask.class_mean_at(0).value_or(0) - b.mask.class_mean_at(0).value_or(0);
  return {true, "informative; mask AP50 difference (full - classic) " + fmt("%+.4f", da), d.str()};
}

// 8: two runs, byte comparison of every file written.
Verdict determinism() {
  std::ostringstream d;
  const fs::path root = fs::temp_directory_path() / ("usseg_acceptance_" + std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
  const auto data = toy_corpus();
  TrainConfig tc = toy_train_config();
  tc.max_steps = 12;
  tc.workers = 1;
  for (const char* name : {"a", "b"}) {
    auto params = build_model<float>(toy_model_config(), tc.seed);
    train_to_dir(tc, toy_model_config(), params, data, (root / name).string());
  }
  auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
  };
  std::size_t files = 0, same = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path other = root / "b" / fs::relative(e.path(), root / "a");
    if (fs::exists(other) && slurp(e.path()) == slurp(other)) ++same;
    else d << "differs: " << fs::relative(e.path(), root / "a").string() << "\n";
  }
  std::size_t files_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "b")) files_b += e.is_regular_file();
  fs::remove_all(root);
  const bool ok = files > 0 && same == files && files_b == files;
  d << "compared " << files << " files (loss log and checkpoints)\n";
  return {ok, std::to_string(same) + "/" + std::to_string(files) + " files byte-identical across two 12-step runs", d.str()};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    bool gating;
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> all = {
      {1, "gradient integrity", true, gradient_integrity}, {2, "shape laws", true, shape_laws},
      {3, "SLCF zero contrast", true, slcf_zero_contrast}, {4, "SAG contract", true, sag_contract},
      {5, "metric oracles", true, metric_oracles},         {6, "toy overfit", true, toy_overfit},
      {7, "ablation report", false, ablation_report},      {8, "determinism", true, determinism},
  };
  int failed = 0;
  std::vector<std::string> lines;
  for (const auto& c : all) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what(), ""};
    }
    char head[512];
    std::snprintf(head, sizeof head, "%s criterion %d (%s): %s [%.1fs]", v.pass ? "PASS" : "FAIL", c.id, c.name, v.summary.c_str(),
                  since(t0));
    std::cout << head << "\n";
    std::istringstream det(v.details);
    for (std::string l; std::getline(det, l);) std::cout << "    " << l << "\n";
    std::cout << std::flush;
    lines.push_back(head);
    if (!v.pass && c.gating) ++failed;
  }
  std::cout << "\nsummary\n";
  for (const auto& l : lines) std::cout << l << "\n";
  return failed == 0 ? 0 : 1;
}
