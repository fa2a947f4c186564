#pragma once

// Self-check suite behind `usseg check`: gradient checks, shape laws,
// module invariants and reference comparisons. Every entry of the invariant
// manifest is covered by at least one check with the same id.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "usseg/usseg.hpp"
#include "usseg/reference.hpp"

namespace usseg::checks {

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Check {
  std::string id;
  std::string title;
  std::function<Outcome()> run;
};

struct Invariant {
  std::string id;
  std::string text;
};

// One line per invariant the library promises.
inline const std::vector<Invariant>& invariant_manifest() {
  static const std::vector<Invariant> m = {
      {"tensor.conv-reference", "conv2d equals a direct-summation reference to 1e-5 absolute"},
      {"tensor.tconv-adjoint", "<conv2d(x,k), y> = <x, transposed_conv2d(y,k)> to 1e-4 relative"},
      {"tensor.concat-slice", "concat_channels then slicing is the identity, bit-exact"},
      {"tensor.grad-rules", "every differentiable op passes the finite-difference check at 1e-4"},
      {"tensor.resize-constant", "bilinear resize of a constant tensor is that constant, bit-exact"},
      {"backbone.flops-quadruple", "doubling H and W quadruples conv MACs"},
      {"backbone.params-size-free", "parameter count does not depend on input size"},
      {"backbone.pure", "same params and image give bit-identical features"},
      {"attention.slcf-zero-contrast", "constant input gives interior SLCF output below 1e-5"},
      {"attention.sag-range", "SAG weights lie in (0,1) and SAG preserves dims"},
      {"attention.sag-scale", "scaling the SAG input keeps weights and output finite"},
      {"attention.gradcheck", "SLCF and SAG pass the finite-difference check at 1e-4"},
      {"attention.sag-permutation", "SAG is equivariant to channel permutations"},
      {"pyramid.level-sizes", "every P level matches its C level for inputs divisible by 32"},
      {"pyramid.tconv-size", "every upsampler output obeys s(i-1)-2p+k"},
      {"pyramid.grad-flow", "every lateral, merge and upsampler parameter receives gradient"},
      {"detect.nms-reference", "NMS equals the quadratic reference on random scenes"},
      {"detect.codec-roundtrip", "decode(encode(b)) = b to 1e-4"},
      {"detect.end-to-end-gradcheck", "the full training loss passes the finite-difference check at 1e-3"},
      {"detect.predict-deterministic", "two predictions on the same input are identical"},
      {"metrics.threshold-monotone", "AP does not increase with the IoU threshold"},
      {"metrics.score-transform", "AP is invariant to strictly increasing score transforms"},
      {"metrics.mask-iou", "mask IoU with itself is 1 and with its complement 0"},
      {"metrics.evaluate-reference", "evaluation equals a brute-force evaluator to 1e-9"},
      {"data.raster-reference", "rasterization equals a point-in-polygon test, pixel-exact"},
      {"data.labelme-roundtrip", "load, save and load reproduces annotations"},
      {"data.synth-reproducible", "synthetic generation is reproducible from the seed"},
      {"trainer.sgd-plain", "momentum 0 and weight decay 0 is plain gradient descent"},
      {"trainer.decay-shrinks", "weight decay with zero gradient shrinks magnitudes monotonically"},
      {"trainer.replay", "training replays identically for the same seed"},
      {"cli.deterministic", "generation, training, prediction and evaluation are deterministic"},
      {"cli.config-roundtrip", "parse, serialize, parse of a run config is the identity"},
      {"cli.coverage", "every invariant has a check"},
  };
  return m;
}

namespace detail {

template <class T>
Tensor<T> random_tensor(Shape s, Rng& rng, double scale = 1.0) {
  Tensor<T> t(s);
  for (auto& v : t.vec()) v = T(rng.normal() * scale);
  return t;
}

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Loss = sum(out * R) for a fixed random R, so every output element gets a
// distinct adjoint.
inline Var project(Tape<double>& tape, Var out, std::uint64_t seed) {
  Rng rng(seed);
  Var r = ad::constant(tape, random_tensor<double>(tape.shape(out), rng));
  return ad::sum(tape, ad::mul(tape, out, r));
}

struct GradCase {
  std::string name;
  std::vector<std::pair<std::string, Tensor<double>>> inputs;
  LossBuilder<double> build;
  double tolerance = 1e-4;
};

inline Outcome run_grad_cases(std::vector<GradCase> cases) {
  std::ostringstream os;
  bool ok = true;
  double worst = 0;
  std::string worst_name;
  for (auto& c : cases) {
    ParamStore<double> store;
    for (auto& [n, t] : c.inputs) store.add(n, t);
    const GradCheckReport r = finite_diff_check(store, c.build);
    std::size_t need = 0;
    for (const auto& e : store.entries()) need = std::max(need, std::min<std::size_t>(100, e.value.numel()));
    bool coords_ok = true;
    for (std::size_t i = 0; i < r.items.size(); ++i)
      coords_ok = coords_ok && r.items[i].coords == std::min<std::size_t>(100, store.entries()[i].value.numel());
    const bool pass = r.passed(c.tolerance) && coords_ok;
    if (!pass) {
      ok = false;
      os << c.name << " max_rel=" << fmt("%.3g", r.max_rel()) << "; ";
    }
    if (r.max_rel() > worst) {
      worst = r.max_rel();
      worst_name = c.name;
    }
  }
  if (ok) os << cases.size() << " graphs, worst " << worst_name << " max_rel=" << fmt("%.3g", worst);
  return {ok, os.str()};
}

inline std::vector<GradCase> op_grad_cases() {
  Rng rng(101);
  auto R = [&](Shape s, double scale = 1.0) { return random_tensor<double>(s, rng, scale); };
  std::vector<GradCase> cs;
  auto unary = [&](const char* name, Shape s, std::function<Var(Tape<double>&, Var)> f) {
    cs.push_back({name, {{"x", R(s)}}, [f](Tape<double>& t, const Bound<double>& p) { return project(t, f(t, p["x"]), 1); }});
  };
  cs.push_back({"add", {{"a", R({2, 3, 4, 4})}, {"b", R({2, 3, 4, 4})}},
                [](Tape<double>& t, const Bound<double>& p) { return project(t, ad::add(t, p["a"], p["b"]), 2); }});
  cs.push_back({"sub", {{"a", R({1, 3, 4, 5})}, {"b", R({1, 3, 1, 1})}},
                [](Tape<double>& t, const Bound<double>& p) { return project(t, ad::sub(t, p["a"], p["b"]), 3); }});
  cs.push_back({"mul-broadcast", {{"a", R({2, 3, 4, 4})}, {"b", R({1, 3, 1, 1})}},
                [](Tape<double>& t, const Bound<double>& p) { return project(t, ad::mul(t, p["a"], p["b"]), 4); }});
  unary("scale", {1, 2, 3, 3}, [](Tape<double>& t, Var x) { return ad::scale(t, x, 0.7); });
  unary("relu", {1, 3, 5, 5}, [](Tape<double>& t, Var x) { return ad::relu(t, x); });
  unary("sigmoid", {1, 3, 5, 5}, [](Tape<double>& t, Var x) { return ad::sigmoid(t, x); });
  auto conv_case = [&](const char* name, Shape xs, Shape ws, ConvGeom g, bool bias) {
    GradCase c{name, {{"x", R(xs)}, {"w", R(ws, 0.5)}}, {}};
    if (bias) c.inputs.push_back({"b", R({1, ws.n, 1, 1})});
    c.build = [g](Tape<double>& t, const Bound<double>& p) {
      return project(t, ad::conv2d(t, p["x"], p["w"], p.optional("b"), g), 5);
    };
    cs.push_back(c);
  };
  conv_case("conv2d-same", {1, 2, 6, 6}, {3, 2, 3, 3}, {1, 1, Padding::same(3, 3)}, true);
  conv_case("conv2d-stride2-asym", {2, 2, 7, 6}, {3, 2, 3, 2}, {2, 1, {1, 0, 0, 1}}, true);
  conv_case("conv2d-dilated", {1, 2, 9, 9}, {2, 2, 3, 3}, {1, 2, Padding::same(3, 3, 2)}, false);
  conv_case("conv2d-pointwise", {1, 4, 3, 3}, {2, 4, 1, 1}, {}, true);
  auto tconv_case = [&](const char* name, Shape xs, Shape ws, std::size_t s, std::size_t pad) {
    cs.push_back({name, {{"x", R(xs)}, {"w", R(ws, 0.5)}, {"b", R({1, ws.c, 1, 1})}},
                  [s, pad](Tape<double>& t, const Bound<double>& p) {
                    return project(t, ad::conv_transpose2d(t, p["x"], p["w"], p["b"], s, pad), 6);
                  }});
  };
  tconv_case("tconv-k2s2", {1, 2, 3, 3}, {2, 3, 2, 2}, 2, 0);
  tconv_case("tconv-k4s4", {1, 2, 2, 3}, {2, 2, 4, 4}, 4, 0);
  tconv_case("tconv-k3s2p1", {1, 2, 3, 3}, {2, 2, 3, 3}, 2, 1);
  cs.push_back({"dense", {{"x", R({2, 5, 1, 1})}, {"w", R({4, 5, 1, 1})}, {"b", R({1, 4, 1, 1})}},
                [](Tape<double>& t, const Bound<double>& p) { return project(t, ad::dense(t, p["x"], p["w"], p["b"]), 7); }});
  unary("max-pool", {1, 2, 6, 6}, [](Tape<double>& t, Var x) { return ad::max_pool2(t, x); });
  unary("global-avg-pool", {2, 3, 4, 5}, [](Tape<double>& t, Var x) { return ad::global_avg_pool(t, x); });
  unary("global-max-pool", {2, 3, 4, 5}, [](Tape<double>& t, Var x) { return ad::global_max_pool(t, x); });
  unary("resize-bilinear-up", {1, 2, 3, 5}, [](Tape<double>& t, Var x) { return ad::resize_bilinear(t, x, 7, 9); });
  unary("resize-bilinear-down", {1, 2, 8, 6}, [](Tape<double>& t, Var x) { return ad::resize_bilinear(t, x, 3, 4); });
  unary("roi-align", {1, 2, 12, 12}, [](Tape<double>& t, Var x) {
    return ad::roi_align(t, x, {Box{1.5f, 2.0f, 17.0f, 14.5f}, Box{-3.0f, 4.0f, 9.0f, 23.0f}, Box{6, 6, 9, 8}}, 3, 0.5);
  });
  cs.push_back({"concat-slice", {{"a", R({1, 2, 3, 3})}, {"b", R({1, 3, 3, 3})}},
                [](Tape<double>& t, const Bound<double>& p) {
                  Var c = ad::concat_channels(t, {p["a"], p["b"], p["a"]});
                  return project(t, ad::slice_channels(t, c, 1, 4), 8);
                }});
  unary("reshape-flatten", {2, 3, 2, 2}, [](Tape<double>& t, Var x) {
    return ad::reshape(t, ad::flatten(t, x), Shape{2, 2, 3, 2});
  });
  cs.push_back({"sum-add-n", {{"a", R({1, 2, 2, 2})}, {"b", R({1, 2, 2, 2})}},
                [](Tape<double>& t, const Bound<double>& p) {
                  Var s = ad::add(t, p["a"], ad::mul(t, p["a"], p["b"]));
                  return ad::add_n(t, {ad::sum(t, ad::mul(t, s, s)), ad::sum(t, p["b"]), project(t, p["a"], 9)});
                }});
  {
    ad::Selection<double> sel;
    for (std::size_t i = 0; i < 30; i += 3) sel.push(i, double(i % 2));
    cs.push_back({"bce-with-logits", {{"x", R({1, 3, 2, 5}, 2.0)}},
                  [sel](Tape<double>& t, const Bound<double>& p) { return ad::bce_with_logits(t, p["x"], sel, 7.0); }});
    ad::Selection<double> reg;
    Rng r2(5);
    for (std::size_t i = 0; i < 30; i += 2) reg.push(i, r2.normal() * 2.0);
    cs.push_back({"smooth-l1", {{"x", R({1, 3, 2, 5}, 2.0)}},
                  [reg](Tape<double>& t, const Bound<double>& p) { return ad::smooth_l1(t, p["x"], reg, 3.0); }});
  }
  cs.push_back({"softmax-cross-entropy", {{"x", R({4, 5, 1, 1}, 2.0)}},
                [](Tape<double>& t, const Bound<double>& p) {
                  return ad::softmax_cross_entropy(t, p["x"], {0, 3, 1, 4}, 4.0);
                }});
  return cs;
}

// SLCF, SAG, and pyramid + SLCF + SAG composed at width / 8.
inline std::vector<GradCase> module_grad_cases() {
  std::vector<GradCase> cs;
  Rng rng(202);
  {
    const SlcfConfig cfg = slcf_config_for(8);
    const auto store = build_slcf<double>(11, 8);
    GradCase c{"slcf", {{"x", random_tensor<double>({1, cfg.channels, 20, 20}, rng)}}, {}};
    for (const auto& e : store.entries()) c.inputs.push_back({e.name, e.value});
    c.build = [cfg](Tape<double>& t, const Bound<double>& p) { return project(t, slcf_forward(p, cfg, p["x"]), 9); };
    cs.push_back(c);
  }
  {
    const SagConfig cfg = sag_config_for(64);
    const auto store = build_sag<double>(12, 64);
    GradCase c{"sag", {{"x", random_tensor<double>({1, 64, 5, 5}, rng)}}, {}};
    for (const auto& e : store.entries()) c.inputs.push_back({e.name, e.value});
    c.build = [cfg](Tape<double>& t, const Bound<double>& p) { return project(t, sag_forward(p, cfg, p["x"]), 10); };
    cs.push_back(c);
  }
  for (auto target : {SkipTarget::P3, SkipTarget::P2}) {
    ModelConfig mc;
    mc.width_divisor = 8;
    mc.skip_target = target;
    const auto bb = mc.backbone();
    const auto widths = bb.effective_widths();
    ParamStore<double> store;
    Rng init(13);
    add_pyramid_params(store, mc.pyramid(), init);
    add_slcf_params(store, mc.slcf(), init);
    add_sag_params(store, mc.sag(), init);
    add_conv(store, "refine.reduce", mc.width(), mc.slcf().output_channels(), 1, init);
    GradCase c{std::string("pyramid-slcf-sag-") + to_string(target), {}, {}};
    const std::size_t sizes[4] = {16, 8, 4, 2};
    for (std::size_t l = 0; l < 4; ++l)
      c.inputs.push_back({"c" + std::to_string(l + 2), random_tensor<double>({1, widths[l + 1], sizes[l], sizes[l]}, rng)});
    for (const auto& e : store.entries()) c.inputs.push_back({e.name, e.value});
    c.build = [mc](Tape<double>& t, const Bound<double>& p) {
      const PyramidOutput py = pyramid_forward(p, mc.pyramid(), FeatureLevels{p["c2"], p["c3"], p["c4"], p["c5"]});
      Var r = refine_p2(p, mc, py.p2);
      return ad::add_n(t, {project(t, r, 11), project(t, py.p3, 12), project(t, py.p4, 13), project(t, py.p5, 14)});
    };
    cs.push_back(c);
  }
  return cs;
}

// A tiny synthetic scene with instances of several classes.
inline AnnotatedImage tiny_scene(std::size_t size, std::uint64_t seed) {
  SynthOptions opts;
  opts.seed = seed;
  opts.height = opts.width = size;
  opts.counts = {{{1, 1}, {1, 1}, {0, 0}, {1, 1}}};
  return synth_generate(opts, 1).front();
}

// The full training loss of a width/8 model on one 64x64 scene in double,
// with sampling and targets frozen from the initial parameters.
inline GradCheckReport end_to_end_gradcheck(const GradCheckOptions& opt = {}) {
  ModelConfig mc;
  mc.width_divisor = 8;
  ParamStore<double> params = build_model<double>(mc, 21);
  const AnnotatedImage scene = tiny_scene(64, 4);
  const Tensor<double> image = normalize_input(scene.image.cast<double>());
  TrainPlan<double> plan;
  {
    Tape<double> tape;
    Bound<double> p(tape, params, false);
    const ModelOutputs out = model_forward(p, mc, ad::constant(tape, image));
    Rng rng(3);
    plan = make_plan(tape, out, mc, 64, 64, scene.instances, rng);
  }
  LossBuilder<double> build = [&](Tape<double>& tape, const Bound<double>& p) {
    const ModelOutputs out = model_forward(p, mc, ad::constant(tape, image));
    return loss_from_plan(p, out, plan).total;
  };
  return finite_diff_check(params, build, opt);
}

}  // namespace detail

inline std::vector<Check> registry() {
  using namespace detail;
  std::vector<Check> c;

  c.push_back({"tensor.grad-rules", "finite differences, every op", [] { return run_grad_cases(op_grad_cases()); }});
  c.push_back({"attention.gradcheck", "finite differences, SLCF / SAG / pyramid micro-networks",
               [] { return run_grad_cases(module_grad_cases()); }});
  c.push_back({"detect.end-to-end-gradcheck", "finite differences, full loss (width/8, 64x64)", [] {
                 const auto r = end_to_end_gradcheck();
                 return Outcome{r.passed(1e-3) && r.min_coords() >= 1,
                                std::to_string(r.items.size()) + " tensors, max_rel=" + fmt("%.3g", r.max_rel())};
               }});

  c.push_back({"tensor.conv-reference", "conv2d vs direct summation", [] {
                 Rng rng(31);
                 double worst = 0;
                 const ConvGeom geoms[] = {{1, 1, Padding::same(3, 3)}, {2, 1, {1, 0, 1, 0}}, {1, 2, Padding::same(3, 3, 2)}, {1, 1, {}}};
                 for (int trial = 0; trial < 12; ++trial) {
                   const ConvGeom g = geoms[trial % 4];
                   const std::size_t C = 1 + std::size_t(rng.uniform_int(0, 3)), O = 1 + std::size_t(rng.uniform_int(0, 3));
                   const std::size_t H = 5 + std::size_t(rng.uniform_int(0, 6)), W = 5 + std::size_t(rng.uniform_int(0, 6));
                   const auto x = random_tensor<float>({2, C, H, W}, rng);
                   const auto w = random_tensor<float>({O, C, 3, 3}, rng);
                   const auto b = random_tensor<float>({1, O, 1, 1}, rng);
                   const auto y = kernels::conv2d_forward(x, w, &b, g);
                   const auto r = reference::conv2d(x, w, &b, g);
                   if (!(y.shape() == r.shape())) return Outcome{false, "shape " + y.shape().str() + " vs " + r.shape().str()};
                   for (std::size_t i = 0; i < y.numel(); ++i) worst = std::max(worst, std::abs(double(y[i]) - r[i]));
                 }
                 return Outcome{worst < 1e-5, "max abs error " + fmt("%.3g", worst)};
               }});

  c.push_back({"tensor.tconv-adjoint", "<conv(x), y> = <x, tconv(y)>", [] {
                 Rng rng(32);
                 double worst = 0;
                 for (int trial = 0; trial < 10; ++trial) {
                   const std::size_t k = 1 + std::size_t(rng.uniform_int(0, 3)), s = 1 + std::size_t(rng.uniform_int(0, 3));
                   const std::size_t p = k > 2 ? std::size_t(rng.uniform_int(0, 1)) : 0;
                   const std::size_t i = 2 + std::size_t(rng.uniform_int(0, 4));
                   const std::size_t H = s * (i - 1) + k - 2 * p;
                   const std::size_t Cin = 2, Cout = 3;
                   const auto w = random_tensor<double>({Cin, Cout, k, k}, rng);  // tconv: Cin -> Cout
                   const auto u = random_tensor<double>({1, Cout, H, H}, rng);
                   const auto y = random_tensor<double>({1, Cin, i, i}, rng);
                   const auto cu = kernels::conv2d_forward(u, w, static_cast<const Tensor<double>*>(nullptr), ConvGeom{s, 1, Padding::uniform(p)});
                   const auto ty = kernels::tconv2d_forward(y, w, static_cast<const Tensor<double>*>(nullptr), s, p);
                   if (!(cu.shape() == y.shape()) || !(ty.shape() == u.shape())) return Outcome{false, "shape mismatch"};
                   double a = 0, b = 0;
                   for (std::size_t j = 0; j < cu.numel(); ++j) a += cu[j] * y[j];
                   for (std::size_t j = 0; j < ty.numel(); ++j) b += u[j] * ty[j];
                   worst = std::max(worst, std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}));
                 }
                 return Outcome{worst < 1e-4, "max rel gap " + fmt("%.3g", worst)};
               }});

  c.push_back({"tensor.concat-slice", "concat then slice is identity", [] {
                 Rng rng(33);
                 Tape<float> t;
                 std::vector<Var> parts;
                 std::vector<Tensor<float>> vals;
                 for (std::size_t cch : {1, 3, 2, 4}) {
                   vals.push_back(random_tensor<float>({2, cch, 3, 4}, rng));
                   parts.push_back(ad::constant(t, vals.back()));
                 }
                 const Var cat = ad::concat_channels(t, parts);
                 std::size_t off = 0;
                 for (const auto& v : vals) {
                   if (!(slice_channels(t.value(cat), off, v.shape().c) == v)) return Outcome{false, "slice differs"};
                   off += v.shape().c;
                 }
                 return Outcome{t.shape(cat).c == 10, "4 parts, 10 channels"};
               }});

  c.push_back({"tensor.resize-constant", "resize of a constant", [] {
                 Rng rng(34);
                 for (int trial = 0; trial < 20; ++trial) {
                   const float v = float(rng.normal() * 10);
                   const std::size_t h = 1 + std::size_t(rng.uniform_int(0, 9)), w = 1 + std::size_t(rng.uniform_int(0, 9));
                   const std::size_t oh = 1 + std::size_t(rng.uniform_int(0, 20)), ow = 1 + std::size_t(rng.uniform_int(0, 20));
                   const auto y = kernels::resize_bilinear_forward(Tensor<float>::constant({1, 2, h, w}, v), oh, ow);
                   for (float x : y.vec())
                     if (x != v) return Outcome{false, "value drift at " + std::to_string(h) + "x" + std::to_string(w)};
                 }
                 return Outcome{true, "20 random sizes"};
               }});

  c.push_back({"backbone.flops-quadruple", "2x input side gives 4x conv MACs", [] {
                 ModelConfig mc;
                 mc.width_divisor = 8;
                 const auto params = build_model<float>(mc, 1);
                 bool ok = true;
                 for (std::size_t s : {64, 96, 160, 320}) {
                   ok = ok && count_params_flops(params, mc, 2 * s, 2 * s).conv_macs == 4 * count_params_flops(params, mc, s, s).conv_macs;
                   ok = ok && backbone_conv_macs(mc.backbone(), 2 * s, s * 2) == 4 * backbone_conv_macs(mc.backbone(), s, s);
                 }
                 // closed form agrees with the instrumented kernels
                 Tape<float> tape;
                 Bound<float> p(tape, params, false);
                 kernels::mac_counter() = 0;
                 backbone_forward(p, mc.backbone(), ad::constant(tape, Tensor<float>({1, 1, 64, 64})));
                 const auto measured = kernels::mac_counter();
                 ok = ok && measured == backbone_conv_macs(mc.backbone(), 64, 64);
                 return Outcome{ok, "measured " + std::to_string(measured) + " MACs at 64x64"};
               }});

  c.push_back({"backbone.params-size-free", "parameter count vs input size", [] {
                 ModelConfig mc;
                 mc.width_divisor = 4;
                 const auto params = build_model<float>(mc, 1);
                 const auto a = count_params_flops(params, mc, 64, 64).parameters;
                 const auto b = count_params_flops(params, mc, 640, 320).parameters;
                 return Outcome{a == b && a == params.parameter_count(), std::to_string(a) + " parameters"};
               }});

  c.push_back({"backbone.pure", "repeatable backbone forward", [] {
                 BackboneConfig cfg;
                 cfg.width_divisor = 8;
                 const auto params = build_backbone<float>(cfg, 5);
                 Rng rng(35);
                 const auto img = random_tensor<float>({1, 1, 64, 96}, rng);
                 auto run = [&] {
                   Tape<float> t;
                   Bound<float> p(t, params, false);
                   const auto f = backbone_forward(p, cfg, ad::constant(t, img));
                   return std::vector<Tensor<float>>{t.value(f.c2), t.value(f.c3), t.value(f.c4), t.value(f.c5)};
                 };
                 return Outcome{run() == run(), "C2..C5 identical"};
               }});

  c.push_back({"attention.slcf-zero-contrast", "constant input, 50 parameter draws", [] {
                 const SlcfConfig cfg = slcf_config_for(8);
                 const std::size_t S = 40, r = 16;  // interior: at least max dilation from the border
                 double worst = 0;
                 Rng rng(36);
                 for (std::uint64_t draw = 0; draw < 50; ++draw) {
                   const auto params = build_slcf<float>(1000 + draw, 8);
                   Tape<float> t;
                   Bound<float> p(t, params, false);
                   const float v = float(rng.normal() * 3);
                   const Var y = slcf_forward(p, cfg, ad::constant(t, Tensor<float>::constant({1, cfg.channels, S, S}, v)));
                   const auto& out = t.value(y);
                   for (std::size_t ch = 0; ch < out.shape().c; ++ch)
                     for (std::size_t i = r; i < S - r; ++i)
                       for (std::size_t j = r; j < S - r; ++j) worst = std::max(worst, double(std::abs(out.at(0, ch, i, j))));
                 }
                 return Outcome{worst < 1e-5, "max interior |v| " + fmt("%.3g", worst)};
               }});

  c.push_back({"attention.sag-range", "weights in (0,1), dims preserved, oracle agreement", [] {
                 Rng rng(37);
                 double worst = 0;
                 bool ok = true;
                 for (int trial = 0; trial < 50; ++trial) {
                   const std::size_t C = 64;
                   const auto params = build_sag<float>(2000 + std::uint64_t(trial), C);
                   const auto f = random_tensor<float>({1, C, 5, 6}, rng, 2.0);
                   Tape<float> t;
                   Bound<float> p(t, params, false);
                   const Var x = ad::constant(t, f);
                   const Var w = sag_weights(p, sag_config_for(C), x);
                   const Var y = sag_forward(p, sag_config_for(C), x);
                   ok = ok && t.shape(y) == f.shape();
                   for (float v : t.value(w).vec()) ok = ok && v > 0.0f && v < 1.0f;
                   // oracle agreement is judged in double so float rounding does not enter
                   const auto pd = params.cast<double>();
                   Tape<double> td;
                   Bound<double> bd(td, pd, false);
                   const auto yd = td.value(sag_forward(bd, sag_config_for(C), ad::constant(td, f.cast<double>())));
                   const auto ref = reference::sag(f.cast<double>(), pd.value("sag.fc1.w"), pd.value("sag.fc1.b"),
                                                   pd.value("sag.fc2.w"), pd.value("sag.fc2.b"));
                   for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(yd[i] - ref[i]));
                 }
                 // zero gate: every channel scaled by exactly one half
                 ParamStore<float> zero = build_sag<float>(1, 16);
                 for (auto& e : zero.entries()) e.value.fill(0.0f);
                 Tape<float> t;
                 Bound<float> p(t, zero, false);
                 const auto f = random_tensor<float>({1, 16, 3, 3}, rng);
                 const Var y = sag_forward(p, sag_config_for(16), ad::constant(t, f));
                 for (std::size_t i = 0; i < f.numel(); ++i) ok = ok && t.value(y)[i] == 0.5f * f[i];
                 return Outcome{ok && worst < 1e-6, "oracle max abs error " + fmt("%.3g", worst)};
               }});

  c.push_back({"attention.sag-scale", "scaled inputs stay finite", [] {
                 const auto params = build_sag<float>(3, 32);
                 Rng rng(38);
                 const auto f = random_tensor<float>({1, 32, 4, 4}, rng);
                 for (float s : {1e-6f, 1e-3f, 1.0f, 1e3f, 1e6f}) {
                   Tensor<float> g = f;
                   for (auto& v : g.vec()) v *= s;
                   Tape<float> t;
                   Bound<float> p(t, params, false);
                   const Var x = ad::constant(t, g);
                   const Var w = sag_weights(p, sag_config_for(32), x);
                   const Var y = sag_forward(p, sag_config_for(32), x);
                   for (float v : t.value(w).vec())
                     if (!std::isfinite(v)) return Outcome{false, "non-finite weight at scale " + fmt("%g", s)};
                   for (float v : t.value(y).vec())
                     if (!std::isfinite(v)) return Outcome{false, "non-finite output at scale " + fmt("%g", s)};
                 }
                 return Outcome{true, "scales 1e-6 .. 1e6"};
               }});

  c.push_back({"attention.sag-permutation", "channel permutation equivariance", [] {
                 const std::size_t C = 24;
                 const auto params = build_sag<float>(4, C);
                 const SagConfig cfg = sag_config_for(C);
                 Rng rng(39);
                 std::vector<std::size_t> perm(C);
                 std::iota(perm.begin(), perm.end(), std::size_t{0});
                 rng.shuffle(perm);
                 const auto f = random_tensor<float>({1, C, 4, 5}, rng);
                 Tensor<float> fp(f.shape());
                 for (std::size_t c = 0; c < C; ++c)
                   std::copy(f.plane(0, perm[c]), f.plane(0, perm[c]) + 20, fp.data() + c * 20);
                 ParamStore<float> pp;
                 Tensor<float> w1 = params.value("sag.fc1.w"), w2 = params.value("sag.fc2.w"), b2 = params.value("sag.fc2.b");
                 const Tensor<float>& o1 = params.value("sag.fc1.w");
                 const Tensor<float>& o2 = params.value("sag.fc2.w");
                 const Tensor<float>& ob2 = params.value("sag.fc2.b");
                 for (std::size_t j = 0; j < cfg.hidden; ++j)
                   for (std::size_t c = 0; c < C; ++c) w1[j * C + c] = o1[j * C + perm[c]];
                 for (std::size_t c = 0; c < C; ++c) {
                   for (std::size_t j = 0; j < cfg.hidden; ++j) w2[c * cfg.hidden + j] = o2[perm[c] * cfg.hidden + j];
                   b2[c] = ob2[perm[c]];
                 }
                 pp.add("sag.fc1.w", w1);
                 pp.add("sag.fc1.b", params.value("sag.fc1.b"));
                 pp.add("sag.fc2.w", w2);
                 pp.add("sag.fc2.b", b2);
                 auto run = [&](const ParamStore<float>& ps, const Tensor<float>& x) {
                   Tape<float> t;
                   Bound<float> p(t, ps, false);
                   return t.value(sag_forward(p, cfg, ad::constant(t, x)));
                 };
                 const auto y = run(params, f), yp = run(pp, fp);
                 double worst = 0;
                 for (std::size_t c = 0; c < C; ++c)
                   for (std::size_t i = 0; i < 20; ++i)
                     worst = std::max(worst, double(std::abs(yp.plane(0, c)[i] - y.plane(0, perm[c])[i])));
                 return Outcome{worst < 1e-5, "max abs gap " + fmt("%.3g", worst)};
               }});

  c.push_back({"pyramid.level-sizes", "P levels equal C levels over random sizes", [] {
                 Rng rng(40);
                 std::vector<std::pair<std::size_t, std::size_t>> sizes{{640, 640}};
                 while (sizes.size() < 11) sizes.push_back({32 * std::size_t(rng.uniform_int(1, 10)), 32 * std::size_t(rng.uniform_int(1, 10))});
                 for (auto mode : {PyramidMode::skip_concat, PyramidMode::classic_fpn})
                   for (auto target : {SkipTarget::P3, SkipTarget::P2}) {
                     if (mode == PyramidMode::classic_fpn && target == SkipTarget::P2) continue;
                     ModelConfig mc;
                     mc.width_divisor = 8;
                     mc.pyramid_mode = mode;
                     mc.skip_target = target;
                     ParamStore<float> params;
                     Rng init(1);
                     add_backbone_params(params, mc.backbone(), init);
                     add_pyramid_params(params, mc.pyramid(), init);
                     for (auto [H, W] : sizes) {
                       Tape<float> t;
                       Bound<float> p(t, params, false);
                       const auto f = backbone_forward(p, mc.backbone(), ad::constant(t, Tensor<float>({1, 1, H, W})));
                       const auto py = pyramid_forward(p, mc.pyramid(), f);
                       const std::pair<Var, Var> pairs[] = {{f.c2, py.p2}, {f.c3, py.p3}, {f.c4, py.p4}, {f.c5, py.p5}};
                       for (std::size_t l = 0; l < 4; ++l) {
                         const Shape cs = t.shape(pairs[l].first), ps = t.shape(pairs[l].second);
                         const std::size_t stride = std::size_t(4) << l;
                         if (cs.h != H / stride || cs.w != W / stride || ps.h != cs.h || ps.w != cs.w)
                           return Outcome{false, "level " + std::to_string(l + 2) + " at " + std::to_string(H) + "x" + std::to_string(W)};
                       }
                     }
                   }
                 return Outcome{true, std::to_string(sizes.size()) + " sizes incl. 640x640, 3 topologies"};
               }});

  c.push_back({"pyramid.tconv-size", "upsampler output sizes", [] {
                 Rng rng(41);
                 std::size_t n = 0;
                 for (auto target : {SkipTarget::P3, SkipTarget::P2}) {
                   ModelConfig mc;
                   mc.width_divisor = 8;
                   mc.skip_target = target;
                   const auto cfg = mc.pyramid();
                   ParamStore<float> params;
                   Rng init(2);
                   add_pyramid_params(params, cfg, init);
                   for (int trial = 0; trial < 10; ++trial) {
                     const std::size_t i = std::size_t(rng.uniform_int(1, 24));
                     for (const auto& e : topology(cfg)) {
                       std::size_t size = i;
                       for (std::size_t st = 0; st < e.kernels.size(); ++st) {
                         const std::size_t k = e.kernels[st];
                         const Tensor<float>& w = params.value(edge_param(e, st) + ".w");
                         const auto y = kernels::tconv2d_forward(Tensor<float>({1, w.shape().n, size, size}), w,
                                                                 static_cast<const Tensor<float>*>(nullptr), k, 0);
                         const std::size_t expect = k * (size - 1) - 2 * 0 + k;
                         if (y.shape().h != expect || y.shape().w != expect || tconv_out_size(size, k, k, 0) != expect)
                           return Outcome{false, edge_param(e, st) + " at input " + std::to_string(size)};
                         size = expect;
                         ++n;
                       }
                     }
                   }
                 }
                 return Outcome{true, std::to_string(n) + " upsampler evaluations"};
               }});

  c.push_back({"pyramid.grad-flow", "no dead pyramid parameters", [] {
                 for (auto mode : {PyramidMode::skip_concat, PyramidMode::classic_fpn})
                   for (auto target : {SkipTarget::P3, SkipTarget::P2}) {
                     ModelConfig mc;
                     mc.width_divisor = 8;
                     mc.pyramid_mode = mode;
                     mc.skip_target = target;
                     const auto widths = mc.backbone().effective_widths();
                     ParamStore<double> store;
                     Rng init(3), rng(42);
                     add_pyramid_params(store, mc.pyramid(), init);
                     for (auto& e : store.entries())
                       if (e.name.size() > 2 && e.name.substr(e.name.size() - 2) == ".b")
                         for (auto& v : e.value.vec()) v = 0.1 * rng.normal();
                     Tape<double> t;
                     Bound<double> p(t, store);
                     FeatureLevels f;
                     Var* lv[4] = {&f.c2, &f.c3, &f.c4, &f.c5};
                     for (std::size_t l = 0; l < 4; ++l)
                       *lv[l] = ad::constant(t, random_tensor<double>({1, widths[l + 1], std::size_t(16) >> l, std::size_t(16) >> l}, rng));
                     const auto py = pyramid_forward(p, mc.pyramid(), f);
                     t.backward(ad::add_n(t, {project(t, py.p2, 1), project(t, py.p3, 2), project(t, py.p4, 3), project(t, py.p5, 4)}));
                     for (const auto& e : store.entries()) {
                       const auto g = t.grad(p[e.name]);
                       if (std::all_of(g.vec().begin(), g.vec().end(), [](double v) { return v == 0.0; }))
                         return Outcome{false, "no gradient reaches " + e.name + " (" + to_string(mode) + ")"};
                     }
                   }
                 return Outcome{true, "all parameters live in 3 topologies"};
               }});

  c.push_back({"detect.nms-reference", "NMS vs quadratic reference, 200 scenes", [] {
                 Rng rng(43);
                 for (int scene = 0; scene < 200; ++scene) {
                   const std::size_t n = std::size_t(rng.uniform_int(0, 40));
                   std::vector<Box> boxes;
                   std::vector<float> scores;
                   for (std::size_t i = 0; i < n; ++i) {
                     const float x = float(rng.uniform(0, 80)), y = float(rng.uniform(0, 80));
                     boxes.push_back({x, y, x + float(rng.uniform(2, 30)), y + float(rng.uniform(2, 30))});
                     scores.push_back(float(rng.uniform_int(0, 20)) / 20.0f);  // frequent ties
                   }
                   const double thr = rng.uniform(0.1, 0.9);
                   if (nms(boxes, scores, thr) != reference::nms(boxes, scores, thr))
                     return Outcome{false, "scene " + std::to_string(scene) + " differs"};
                 }
                 return Outcome{true, "200 scenes identical"};
               }});

  c.push_back({"detect.codec-roundtrip", "decode(encode(b)) = b", [] {
                 Rng rng(44);
                 double worst = 0;
                 for (const BoxCoder& coder : {BoxCoder{}, head_box_coder()})
                   for (int i = 0; i < 500; ++i) {
                     const float ax = float(rng.uniform(0, 500)), ay = float(rng.uniform(0, 500));
                     const Box a{ax, ay, ax + float(rng.uniform(4, 200)), ay + float(rng.uniform(4, 200))};
                     const float gx = float(rng.uniform(0, 500)), gy = float(rng.uniform(0, 500));
                     const Box g{gx, gy, gx + float(rng.uniform(4, 200)), gy + float(rng.uniform(4, 200))};
                     const Box d = coder.decode(a, coder.encode(a, g));
                     // relative to coordinate magnitude: single precision cannot hold 1e-4 absolute at x ~ 500
                     const float got[4] = {d.x1, d.y1, d.x2, d.y2}, want[4] = {g.x1, g.y1, g.x2, g.y2};
                     for (int j = 0; j < 4; ++j)
                       worst = std::max(worst, std::abs(double(got[j]) - want[j]) / std::max(1.0, std::abs(double(want[j]))));
                   }
                 return Outcome{worst < 1e-4, "max relative coordinate error " + fmt("%.3g", worst)};
               }});

  c.push_back({"detect.predict-deterministic", "repeat inference", [] {
                 ModelConfig mc;
                 mc.width_divisor = 8;
                 mc.score_threshold = 0.0;
                 const auto params = build_model<float>(mc, 6);
                 const auto scene = tiny_scene(64, 9);
                 const auto a = predict_image(params, mc, scene.image), b = predict_image(params, mc, scene.image);
                 bool same = a.size() == b.size() && a.size() <= mc.max_detections;
                 for (std::size_t i = 0; same && i < a.size(); ++i)
                   same = a[i].label == b[i].label && a[i].score == b[i].score && a[i].box == b[i].box && a[i].mask == b[i].mask;
                 return Outcome{same, std::to_string(a.size()) + " detections, identical"};
               }});

  // Random corpora of detections scattered around ground truth.
  struct Corpus {
    std::map<std::string, std::vector<Detection>> preds;
    std::vector<GroundTruthImage> gts;
  };
  auto make_corpus = [](Rng& rng, std::size_t images) {
    Corpus c;
    const std::size_t S = 24;
    for (std::size_t i = 0; i < images; ++i) {
      GroundTruthImage g{"img" + std::to_string(i), {}};
      const int ng = rng.uniform_int(0, 4);
      for (int k = 0; k < ng; ++k) {
        Instance inst;
        inst.label = rng.uniform_int(1, 3);  // class 4 left absent
        const float x = float(rng.uniform_int(0, 14)), y = float(rng.uniform_int(0, 14));
        inst.box = {x, y, x + float(rng.uniform_int(3, 9)), y + float(rng.uniform_int(3, 9))};
        inst.mask = BinaryMask(S, S);
        for (std::size_t yy = std::size_t(inst.box.y1); yy < std::size_t(inst.box.y2); ++yy)
          for (std::size_t xx = std::size_t(inst.box.x1); xx < std::size_t(inst.box.x2); ++xx) inst.mask.at(yy, xx) = 1;
        g.instances.push_back(inst);
      }
      std::vector<Detection> dets;
      const int nd = rng.uniform_int(0, 6);
      for (int k = 0; k < nd; ++k) {
        Detection d;
        d.label = rng.uniform_int(1, 3);
        d.score = float(rng.uniform_int(1, 10)) / 10.0f;
        Box base{float(rng.uniform_int(0, 14)), float(rng.uniform_int(0, 14)), 0, 0};
        base.x2 = base.x1 + float(rng.uniform_int(3, 9));
        base.y2 = base.y1 + float(rng.uniform_int(3, 9));
        if (!g.instances.empty() && rng.uniform() < 0.7) {
          const Box& gb = g.instances[std::size_t(rng.uniform_int(0, int(g.instances.size()) - 1))].box;
          const float jx = float(rng.uniform_int(-2, 2)), jy = float(rng.uniform_int(-2, 2));
          base = {std::max(0.0f, gb.x1 + jx), std::max(0.0f, gb.y1 + jy), std::min(float(S), gb.x2 + jx), std::min(float(S), gb.y2 + jy)};
        }
        d.box = base;
        d.mask = BinaryMask(S, S);
        for (std::size_t yy = std::size_t(base.y1); yy < std::size_t(base.y2); ++yy)
          for (std::size_t xx = std::size_t(base.x1); xx < std::size_t(base.x2); ++xx) d.mask.at(yy, xx) = rng.uniform() < 0.9;
        dets.push_back(d);
      }
      c.preds[g.id] = dets;
      c.gts.push_back(g);
    }
    return c;
  };

  c.push_back({"metrics.threshold-monotone", "AP vs IoU threshold", [make_corpus] {
                 Rng rng(45);
                 for (int trial = 0; trial < 30; ++trial) {
                   const Corpus cp = make_corpus(rng, 6);
                   const auto r = evaluate(cp.preds, cp.gts);
                   for (const APReport* rep : {&r.box, &r.mask})
                     for (int cl = 1; cl <= kNumClasses; ++cl)
                       if (rep->present(cl))
                         for (std::size_t k = 0; k + 1 < kNumThresholds; ++k)
                           if (rep->at(cl, k + 1) > rep->at(cl, k)) return Outcome{false, "increase at threshold index " + std::to_string(k)};
                 }
                 return Outcome{true, "30 corpora"};
               }});

  c.push_back({"metrics.score-transform", "AP under monotone score maps", [make_corpus] {
                 Rng rng(46);
                 for (int trial = 0; trial < 30; ++trial) {
                   Corpus cp = make_corpus(rng, 6);
                   const auto a = evaluate(cp.preds, cp.gts);
                   for (auto& [id, ds] : cp.preds)
                     for (auto& d : ds) d.score = d.score * d.score * d.score + 0.5f;
                   const auto b = evaluate(cp.preds, cp.gts);
                   if (a.box.per_class != b.box.per_class || a.mask.per_class != b.mask.per_class)
                     return Outcome{false, "AP changed in corpus " + std::to_string(trial)};
                 }
                 return Outcome{true, "30 corpora"};
               }});

  c.push_back({"metrics.mask-iou", "self and complement IoU", [] {
                 Rng rng(47);
                 for (int trial = 0; trial < 20; ++trial) {
                   BinaryMask m(9, 11), comp(9, 11);
                   for (auto& v : m.data) v = rng.uniform() < 0.4;
                   m.data[0] = 1;
                   m.data[1] = 0;
                   for (std::size_t i = 0; i < m.data.size(); ++i) comp.data[i] = !m.data[i];
                   if (mask_iou(m, m) != 1.0 || mask_iou(m, comp) != 0.0) return Outcome{false, "mask " + std::to_string(trial)};
                 }
                 return Outcome{true, "20 masks"};
               }});

  c.push_back({"metrics.evaluate-reference", "evaluation vs brute force, 200 scenes", [make_corpus] {
                 Rng rng(48);
                 double worst = 0;
                 for (int trial = 0; trial < 10; ++trial) {
                   const Corpus cp = make_corpus(rng, 20);
                   const auto r = evaluate(cp.preds, cp.gts);
                   for (const APReport* rep : {&r.box, &r.mask})
                     for (int cl = 1; cl <= kNumClasses; ++cl)
                       for (std::size_t k = 0; k < kNumThresholds; ++k) {
                         const auto ref = reference::class_ap(cp.preds, cp.gts, cl, iou_threshold(k), rep->task);
                         if (ref.has_value() != rep->present(cl)) return Outcome{false, "presence differs"};
                         if (ref) worst = std::max(worst, std::abs(*ref - rep->at(cl, k)));
                       }
                 }
                 const double five_sixths = average_precision({{0.9f, true}, {0.8f, false}, {0.7f, true}}, 2);
                 return Outcome{worst < 1e-9 && five_sixths == 5.0 / 6.0,
                                "max gap " + fmt("%.3g", worst) + ", hand example " + fmt("%.6f", five_sixths)};
               }});

  c.push_back({"data.raster-reference", "rasterization vs point-in-polygon, 100 polygons", [] {
                 Rng rng(49);
                 for (int trial = 0; trial < 100; ++trial) {
                   const std::size_t H = 20, W = 24;
                   std::vector<Point> poly;
                   const int n = rng.uniform_int(3, 9);
                   for (int i = 0; i < n; ++i) {
                     // half the polygons use integer and half-integer vertices to hit pixel-center ties
                     const bool grid = trial % 2 == 0;
                     const double x = grid ? rng.uniform_int(-4, 56) * 0.5 : rng.uniform(-2, 26);
                     const double y = grid ? rng.uniform_int(-4, 48) * 0.5 : rng.uniform(-2, 22);
                     poly.push_back({x, y});
                   }
                   const BinaryMask m = rasterize_polygon(poly, H, W);
                   for (std::size_t y = 0; y < H; ++y)
                     for (std::size_t x = 0; x < W; ++x)
                       if (bool(m.at(y, x)) != reference::point_in_polygon(poly, double(x) + 0.5, double(y) + 0.5))
                         return Outcome{false, "polygon " + std::to_string(trial)};
                 }
                 return Outcome{true, "100 polygons pixel-exact"};
               }});

  c.push_back({"data.labelme-roundtrip", "annotation round trip", [] {
                 namespace fs = std::filesystem;
                 const fs::path dir = fs::temp_directory_path() / ("usseg_check_" + std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
                 SynthOptions opts;
                 opts.height = opts.width = 64;
                 auto corpus = synth_generate(opts, 2);
                 bool ok = true;
                 for (const auto& a : corpus) {
                   save_labelme(a, dir.string());
                   const auto b = load_labelme((dir / (a.id + ".json")).string());
                   save_labelme(b, (dir / "again").string());
                   const auto c2 = load_labelme((dir / "again" / (a.id + ".json")).string());
                   ok = ok && b.image == a.image && b.instances.size() == a.instances.size() && b.group == a.group;
                   for (std::size_t i = 0; ok && i < a.instances.size(); ++i) {
                     ok = b.instances[i].label == a.instances[i].label && b.instances[i].mask == a.instances[i].mask &&
                          b.instances[i].box == a.instances[i].box && c2.instances[i].polygon == b.instances[i].polygon;
                     for (std::size_t k = 0; ok && k < a.instances[i].polygon.size(); ++k)
                       ok = std::abs(a.instances[i].polygon[k].x - b.instances[i].polygon[k].x) < 1e-6 &&
                            std::abs(a.instances[i].polygon[k].y - b.instances[i].polygon[k].y) < 1e-6;
                   }
                 }
                 fs::remove_all(dir);
                 return Outcome{ok, "2 synthetic scenes"};
               }});

  c.push_back({"data.synth-reproducible", "same seed, same corpus", [] {
                 SynthOptions opts;
                 opts.height = opts.width = 96;
                 opts.seed = 77;
                 const auto a = synth_generate(opts, 3), b = synth_generate(opts, 3);
                 bool ok = a.size() == b.size();
                 for (std::size_t i = 0; ok && i < a.size(); ++i) {
                   ok = a[i].image == b[i].image && a[i].instances.size() == b[i].instances.size();
                   for (std::size_t k = 0; ok && k < a[i].instances.size(); ++k)
                     ok = a[i].instances[k].polygon == b[i].instances[k].polygon && a[i].instances[k].mask == b[i].instances[k].mask &&
                          a[i].instances[k].mask.bounding_box() == a[i].instances[k].box;
                 }
                 return Outcome{ok, "3 scenes identical, boxes tight"};
               }});

  c.push_back({"trainer.sgd-plain", "momentum 0, wd 0", [] {
                 Rng rng(50);
                 Tensor<float> p = random_tensor<float>({1, 3, 4, 4}, rng), v(p.shape());
                 const Tensor<float> g = random_tensor<float>(p.shape(), rng);
                 Tensor<float> expect = p;
                 for (std::size_t i = 0; i < p.numel(); ++i) expect[i] = p[i] - 0.05f * g[i];
                 sgd_update(p, g, v, 0.05, 0.0, 0.0);
                 return Outcome{p == expect, "48 coordinates exact"};
               }});

  c.push_back({"trainer.decay-shrinks", "weight decay alone", [] {
                 Rng rng(51);
                 Tensor<float> p = random_tensor<float>({1, 2, 3, 3}, rng), v(p.shape());
                 const Tensor<float> g(p.shape());
                 Tensor<float> prev = p;
                 for (int step = 0; step < 50; ++step) {
                   sgd_update(p, g, v, 0.1, 0.9, 0.01);
                   for (std::size_t i = 0; i < p.numel(); ++i)
                     if (!(std::abs(p[i]) < std::abs(prev[i]))) return Outcome{false, "step " + std::to_string(step)};
                   prev = p;
                 }
                 return Outcome{true, "50 steps strictly shrinking"};
               }});

  auto tiny_training = [] {
    ModelConfig mc;
    mc.width_divisor = 8;
    TrainConfig tc;
    tc.max_steps = 2;
    SynthOptions opts;
    opts.height = opts.width = 64;
    const auto data = synth_generate(opts, 3);
    auto params = build_model<float>(mc, 8);
    auto log = train_loop(tc, mc, params, data);
    std::string text;
    for (const auto& s : log) text += format_step(s) + "\n";
    return std::pair{text, params};
  };

  c.push_back({"trainer.replay", "two identical training runs", [tiny_training] {
                 const auto a = tiny_training(), b = tiny_training();
                 return Outcome{a.first == b.first && a.second.same_values(b.second), "2 steps, logs and parameters identical"};
               }});

  c.push_back({"cli.deterministic", "generate, train, predict, evaluate twice", [tiny_training] {
                 auto pipeline = [&] {
                   const auto [log, params] = tiny_training();
                   ModelConfig mc;
                   mc.width_divisor = 8;
                   mc.score_threshold = 0.0;
                   SynthOptions opts;
                   opts.height = opts.width = 64;
                   const auto data = synth_generate(opts, 2);
                   std::map<std::string, std::vector<Detection>> preds;
                   for (const auto& d : data) preds[d.id] = predict_image(params, mc, d.image);
                   const auto r = evaluate(preds, ground_truth(data));
                   return log + format_key_values(r.box) + format_key_values(r.mask);
                 };
                 return Outcome{pipeline() == pipeline(), "outputs identical"};
               }});

  c.push_back({"cli.config-roundtrip", "parse / serialize / parse", [] {
                 RunConfig a;
                 a.train.lr = 0.0123456789;
                 a.model.skip_target = SkipTarget::P2;
                 a.model.pyramid_mode = PyramidMode::classic_fpn;
                 a.synth.counts[0] = {2, 3};
                 a.model.anchor_sizes = {24, 48, 96, 192};
                 const RunConfig b = parse_run_config(a.serialize());
                 const RunConfig d = parse_run_config(b.serialize());
                 bool rejects = false;
                 try {
                   parse_run_config("lr=0.01\nlearning_rate=0.1\n");
                 } catch (const ParseError&) {
                   rejects = true;
                 }
                 return Outcome{a == b && b == d && b.train == a.train && rejects, "round trip exact, unknown key rejected"};
               }});

  return c;
}

// The coverage check runs against the final registry.
inline std::vector<Check> all_checks() {
  auto c = registry();
  std::vector<std::string> ids;
  for (const auto& x : c) ids.push_back(x.id);
  c.push_back({"cli.coverage", "every invariant has a check", [ids] {
                 std::string missing;
                 for (const auto& inv : invariant_manifest())
                   if (inv.id != "cli.coverage" && std::find(ids.begin(), ids.end(), inv.id) == ids.end()) missing += inv.id + " ";
                 return Outcome{missing.empty(), missing.empty() ? std::to_string(invariant_manifest().size()) + " invariants covered" : "missing: " + missing};
               }});
  return c;
}

struct RunSummary {
  std::size_t passed = 0, failed = 0;
  double seconds = 0;
};

// Runs every check, printing one row each. Exceptions count as failures.
inline RunSummary run_all(std::ostream& os, const std::string& filter = "") {
  RunSummary s;
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& c : all_checks()) {
    if (!filter.empty() && c.id.find(filter) == std::string::npos) continue;
    const auto t = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
    char line[128];
    std::snprintf(line, sizeof line, "%-4s %-30s %7.2fs  ", o.passed ? "PASS" : "FAIL", c.id.c_str(), dt);
    os << line << o.detail << std::endl;
    (o.passed ? s.passed : s.failed)++;
  }
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return s;
}

}  // namespace usseg::checks
