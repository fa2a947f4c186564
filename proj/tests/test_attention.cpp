#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace usseg;

namespace {

Tensor<float> slcf(const ParamStore<float>& params, const SlcfConfig& cfg, const Tensor<float>& x) {
  Tape<float> t;
  Bound<float> p(t, params, false);
  return t.value(slcf_forward(p, cfg, ad::constant(t, x)));
}

Tensor<float> sag(const ParamStore<float>& params, const Tensor<float>& x, Tensor<float>* weights = nullptr) {
  Tape<float> t;
  Bound<float> p(t, params, false);
  const SagConfig cfg = sag_config_for(x.shape().c);
  const Var v = ad::constant(t, x);
  if (weights) *weights = t.value(sag_weights(p, cfg, v));
  return t.value(sag_forward(p, cfg, v));
}

}  // namespace

TEST(Slcf, ConstantInputHasZeroInterior) {
  const SlcfConfig cfg = slcf_config_for(16);
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto y = slcf(build_slcf<float>(seed, 16), cfg, Tensor<float>::constant({1, 8, 40, 40}, 1.7f));
    ASSERT_EQ(y.shape(), (Shape{1, 32, 40, 40}));
    for (std::size_t c = 0; c < 32; ++c)
      for (std::size_t i = 16; i < 24; ++i)
        for (std::size_t j = 16; j < 24; ++j) EXPECT_EQ(y.at(0, c, i, j), 0.0f);
  }
}

TEST(Slcf, ZeroKernelsGiveZero) {
  auto params = build_slcf<float>(1, 16);
  for (auto& e : params.entries()) e.value.fill(0.0f);
  Rng rng(1);
  const auto y = slcf(params, slcf_config_for(16), oracle::random<float>({1, 8, 20, 20}, rng));
  for (float v : y.vec()) EXPECT_EQ(v, 0.0f);
}

TEST(Slcf, MatchesTwoConvolutionOracle) {
  const auto params = build_slcf<float>(5, 16);
  const SlcfConfig cfg = slcf_config_for(16);
  Rng rng(2);
  const auto x = oracle::random<float>({1, 8, 48, 48}, rng);
  const auto y = slcf(params, cfg, x);
  const std::size_t dil[4] = {2, 4, 8, 16};
  for (std::size_t b = 0; b < 4; ++b) {
    const auto& k = params.value("slcf.branch" + std::to_string(b) + ".w");
    std::size_t oh = 0, ow = 0;
    const auto wide = oracle::conv(x, k, {}, 1, dil[b], dil[b], dil[b], dil[b], dil[b], oh, ow);
    const auto narrow = oracle::conv(x, k, {}, 1, 1, 1, 1, 1, 1, oh, ow);
    for (std::size_t c = 0; c < 8; ++c)
      for (std::size_t i = 0; i < 48 * 48; ++i)
        ASSERT_NEAR(y.plane(0, b * 8 + c)[i], wide[c * 48 * 48 + i] - narrow[c * 48 * 48 + i], 1e-4);
  }
}

TEST(Slcf, OutputWidthsAndErrors) {
  EXPECT_EQ(slcf_config_for(1).output_channels(), 512u);
  EXPECT_EQ(slcf_config_for(4).output_channels(), 128u);
  EXPECT_TRUE(build_slcf<float>(9, 8).same_values(build_slcf<float>(9, 8)));
  EXPECT_THROW(slcf(build_slcf<float>(1, 16), slcf_config_for(16), Tensor<float>({1, 7, 8, 8})), ShapeError);
}

TEST(Slcf, IndependentKernelVariant) {
  const auto params = build_slcf<float>(1, 16, false);
  EXPECT_TRUE(params.contains("slcf.branch0.dilated.w"));
  EXPECT_TRUE(params.contains("slcf.branch3.plain.b"));
  Rng rng(3);
  EXPECT_EQ(slcf(params, slcf_config_for(16, false), oracle::random<float>({1, 8, 16, 16}, rng)).shape(), (Shape{1, 32, 16, 16}));
}

TEST(Sag, ZeroGateHalvesEverything) {
  auto params = build_sag<float>(1, 32);
  for (auto& e : params.entries()) e.value.fill(0.0f);
  Rng rng(4);
  const auto x = oracle::random<float>({1, 32, 5, 5}, rng);
  Tensor<float> w;
  const auto y = sag(params, x, &w);
  for (float v : w.vec()) EXPECT_EQ(v, 0.5f);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], 0.5f * x[i]);
}

TEST(Sag, SaturatedGatePassesInputThrough) {
  auto params = build_sag<double>(1, 16);
  for (auto& e : params.entries()) e.value.fill(0.0);
  params.value("sag.fc2.b").fill(20.0);
  Rng rng(5);
  const auto x = oracle::random<double>({1, 16, 4, 4}, rng);
  Tape<double> t;
  Bound<double> p(t, params, false);
  const auto w = t.value(sag_weights(p, sag_config_for(16), ad::constant(t, x)));
  // sigmoid(20 + 20) differs from 1 by about 4e-18
  for (double v : w.vec()) EXPECT_NEAR(v, 1.0, 1e-8);
}

TEST(Sag, MatchesScalarRecomputation) {
  const std::size_t C = 512;
  const auto params = build_sag<double>(7, C);
  Rng rng(6);
  const auto x = oracle::random<double>({1, C, 8, 8}, rng);
  Tape<double> t;
  Bound<double> p(t, params, false);
  const auto w = t.value(sag_weights(p, sag_config_for(C), ad::constant(t, x)));
  const auto& w1 = params.value("sag.fc1.w");
  const auto& b1 = params.value("sag.fc1.b");
  const auto& w2 = params.value("sag.fc2.w");
  const auto& b2 = params.value("sag.fc2.b");
  const std::size_t H = w1.shape().n;
  std::vector<double> avg(C), mx(C);
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0, m = -1e300;
    for (std::size_t i = 0; i < 64; ++i) {
      s += x.plane(0, c)[i];
      m = std::max(m, x.plane(0, c)[i]);
    }
    avg[c] = s / 64;
    mx[c] = m;
  }
  auto theta = [&](const std::vector<double>& v, std::size_t out) {
    double acc = b2[out];
    for (std::size_t j = 0; j < H; ++j) {
      double h = b1[j];
      for (std::size_t c = 0; c < C; ++c) h += w1[j * C + c] * v[c];
      acc += w2[out * H + j] * std::max(0.0, h);
    }
    return acc;
  };
  for (std::size_t c = 0; c < C; ++c) EXPECT_NEAR(w[c], 1.0 / (1.0 + std::exp(-(theta(avg, c) + theta(mx, c)))), 1e-6);
}

TEST(Sag, RangeDimsAndFiniteness) {
  Rng rng(7);
  const auto params = build_sag<float>(2, 64);
  for (float scale : {1e-4f, 1.0f, 50.0f, 1e5f}) {
    auto x = oracle::random<float>({2, 64, 3, 7}, rng, scale);
    Tensor<float> w;
    const auto y = sag(params, x, &w);
    EXPECT_EQ(y.shape(), x.shape());
    EXPECT_EQ(w.shape(), (Shape{2, 64, 1, 1}));
    for (float v : w.vec()) {
      EXPECT_GT(v, 0.0f);
      EXPECT_LT(v, 1.0f);
    }
    for (float v : y.vec()) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Sag, WidthMismatchAndParameterCount) {
  EXPECT_THROW(sag(build_sag<float>(1, 32), Tensor<float>({1, 16, 2, 2})), ShapeError);
  EXPECT_EQ(sag_config_for(512).hidden, 64u);
  EXPECT_TRUE(build_sag<float>(3, 64).same_values(build_sag<float>(3, 64)));
}

TEST(Sag, PermutationEquivariance) {
  const std::size_t C = 16;
  const auto params = build_sag<double>(3, C);
  std::vector<std::size_t> perm(C);
  for (std::size_t i = 0; i < C; ++i) perm[i] = (5 * i + 3) % C;
  Rng rng(8);
  const auto x = oracle::random<double>({1, C, 3, 3}, rng);
  Tensor<double> xp(x.shape());
  for (std::size_t c = 0; c < C; ++c) std::copy(x.plane(0, perm[c]), x.plane(0, perm[c]) + 9, xp.plane(0, c));
  ParamStore<double> q = params;
  const std::size_t H = sag_config_for(C).hidden;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t j = 0; j < H; ++j) {
      q.value("sag.fc1.w")[j * C + c] = params.value("sag.fc1.w")[j * C + perm[c]];
      q.value("sag.fc2.w")[c * H + j] = params.value("sag.fc2.w")[perm[c] * H + j];
    }
    q.value("sag.fc2.b")[c] = params.value("sag.fc2.b")[perm[c]];
  }
  auto run = [](const ParamStore<double>& ps, const Tensor<double>& in) {
    Tape<double> t;
    Bound<double> p(t, ps, false);
    return t.value(sag_forward(p, sag_config_for(in.shape().c), ad::constant(t, in)));
  };
  const auto y = run(params, x), yp = run(q, xp);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(yp.plane(0, c)[i], y.plane(0, perm[c])[i], 1e-12);
}

TEST(Attention, GradientCheckMicroNetwork) {
  ParamStore<double> params = build_slcf<double>(4, 16);
  Rng init(5);
  add_sag_params(params, sag_config_for(32), init);
  Rng rng(9);
  params.add("x", oracle::random<double>({1, 8, 36, 36}, rng));
  const auto r = oracle::random<double>({1, 32, 36, 36}, rng);
  const auto report = finite_diff_check<double>(params, [&](Tape<double>& t, const Bound<double>& p) {
    const Var s = slcf_forward(p, slcf_config_for(16), p["x"]);
    return ad::sum(t, ad::mul(t, sag_forward(p, sag_config_for(32), s), ad::constant(t, r)));
  });
  EXPECT_LT(report.max_rel(), 1e-4);
  EXPECT_EQ(report.min_coords(), 4u);  // fc1 bias at hidden = 32 / 8
}
