#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace usseg;

namespace {

BinaryMask rect_mask(std::size_t H, std::size_t W, const Box& b) {
  BinaryMask m(H, W);
  for (std::size_t y = std::size_t(b.y1); y < std::size_t(b.y2); ++y)
    for (std::size_t x = std::size_t(b.x1); x < std::size_t(b.x2); ++x) m.at(y, x) = 1;
  return m;
}

Instance gt(int label, Box b, std::size_t H = 32, std::size_t W = 32) {
  Instance i;
  i.label = label;
  i.box = b;
  i.mask = rect_mask(H, W, b);
  return i;
}

Detection det(int label, float score, Box b, std::size_t H = 32, std::size_t W = 32) {
  return Detection{label, score, b, rect_mask(H, W, b)};
}

struct Corpus {
  std::map<std::string, std::vector<Detection>> preds;
  std::map<std::string, std::vector<Instance>> truth;
  std::vector<GroundTruthImage> gts() const {
    std::vector<GroundTruthImage> out;
    for (const auto& [id, inst] : truth) out.push_back({id, inst});
    return out;
  }
};

Box jitter(Rng& rng, const Box& b, double amount) {
  auto j = [&](float v) { return float(std::clamp(double(v) + rng.uniform(-amount, amount), 0.0, 32.0)); };
  Box o{j(b.x1), j(b.y1), j(b.x2), j(b.y2)};
  if (o.x2 < o.x1 + 1) o.x2 = std::min(32.0f, o.x1 + 1);
  if (o.y2 < o.y1 + 1) o.y2 = std::min(32.0f, o.y1 + 1);
  return o;
}

// Integer-cornered boxes keep box and mask IoU comparable.
Box random_box(Rng& rng) {
  const float x = float(rng.uniform_int(0, 24)), y = float(rng.uniform_int(0, 24));
  return Box{x, y, x + float(rng.uniform_int(2, 8)), y + float(rng.uniform_int(2, 8))};
}

Corpus random_corpus(Rng& rng, std::size_t scenes) {
  Corpus c;
  for (std::size_t s = 0; s < scenes; ++s) {
    const std::string id = "scene" + std::to_string(s);
    auto& t = c.truth[id];
    const int n = rng.uniform_int(0, 4);
    for (int i = 0; i < n; ++i) t.push_back(gt(rng.uniform_int(1, 3), random_box(rng)));
    auto& p = c.preds[id];
    for (const auto& g : t)
      if (rng.uniform(0, 1) < 0.8) {
        Detection d = det(g.label, float(rng.uniform(0, 1)), jitter(rng, g.box, 2.0));
        if (rng.uniform(0, 1) < 0.3) d.mask = rect_mask(32, 32, jitter(rng, g.box, 3.0));
        p.push_back(d);
      }
    const int fp = rng.uniform_int(0, 3);
    for (int i = 0; i < fp; ++i) p.push_back(det(rng.uniform_int(1, 4), float(rng.uniform(0, 1)), random_box(rng)));
  }
  return c;
}

}  // namespace

TEST(Iou, BoxExamples) {
  const Box a{0, 0, 2, 2};
  EXPECT_EQ(box_iou(a, a), 1.0);
  EXPECT_EQ(box_iou(a, Box{5, 5, 6, 6}), 0.0);
  EXPECT_DOUBLE_EQ(box_iou(a, Box{1, 1, 3, 3}), 1.0 / 7.0);
  EXPECT_EQ(box_iou(Box{1, 1, 1, 1}, Box{1, 1, 1, 1}), 0.0);
}

TEST(Iou, MaskProperties) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    BinaryMask m(9, 13);
    for (auto& v : m.data) v = rng.uniform(0, 1) < 0.4;
    m.data[0] = 1;
    m.data[1] = 0;
    BinaryMask comp = m;
    for (auto& v : comp.data) v = !v;
    EXPECT_EQ(mask_iou(m, m), 1.0);
    EXPECT_EQ(mask_iou(m, comp), 0.0);
  }
  EXPECT_EQ(mask_iou(BinaryMask(4, 4), BinaryMask(4, 4)), 0.0);
  EXPECT_DOUBLE_EQ(mask_iou(rect_mask(8, 8, {0, 0, 2, 2}), rect_mask(8, 8, {1, 1, 3, 3})), 1.0 / 7.0);
  EXPECT_THROW(mask_iou(BinaryMask(4, 4), BinaryMask(4, 5)), ShapeError);
}

TEST(Matching, Examples) {
  const std::vector<Instance> one{gt(1, {0, 0, 10, 10})};
  // IoU 0.8 against a threshold of 0.7
  EXPECT_EQ(match_detections({det(1, 0.9f, {0, 0, 10, 8})}, one, 0.7, IouKind::box), (std::vector<bool>{true}));
  EXPECT_EQ(match_detections({det(1, 0.5f, {0, 0, 10, 10}), det(1, 0.9f, {0, 0, 10, 9})}, one, 0.5, IouKind::box),
            (std::vector<bool>{false, true}));
  EXPECT_EQ(match_detections({det(2, 0.9f, {0, 0, 10, 10})}, one, 0.5, IouKind::box), (std::vector<bool>{false}));
  EXPECT_EQ(match_detections({det(1, 0.9f, {0, 0, 10, 10})}, {}, 0.5, IouKind::box), (std::vector<bool>{false}));
}

TEST(Matching, PicksHighestIouGt) {
  const std::vector<Instance> two{gt(1, {0, 0, 10, 10}), gt(1, {2, 0, 12, 10})};
  // The first detection overlaps the second GT more; the second then takes the first GT.
  const auto tp = match_detections({det(1, 0.9f, {2, 0, 12, 10}), det(1, 0.8f, {1, 0, 11, 10})}, two, 0.5,
                                   IouKind::box);
  EXPECT_EQ(tp, (std::vector<bool>{true, true}));
}

TEST(AveragePrecision, Examples) {
  EXPECT_EQ(average_precision({{0.9f, true}}, 1), 1.0);
  EXPECT_EQ(average_precision({}, 3), 0.0);
  EXPECT_EQ(average_precision({}, 0), 0.0);
  EXPECT_EQ(average_precision({{0.9f, true}, {0.8f, false}, {0.7f, true}}, 2), 5.0 / 6.0);
  EXPECT_EQ(average_precision({{0.7f, true}, {0.9f, true}, {0.8f, false}}, 2), 5.0 / 6.0);
  EXPECT_NEAR(average_precision({{0.9f, false}, {0.8f, true}}, 1), 0.5, 1e-15);
}

TEST(AveragePrecision, MatchesEnvelopeOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = std::size_t(rng.uniform_int(0, 30));
    std::vector<ScoredFlag> flags;
    std::vector<std::pair<double, bool>> ranked;
    std::size_t tps = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const float s = float(rng.uniform_int(0, 1000)) / 1000.0f;
      const bool tp = rng.uniform(0, 1) < 0.5;
      tps += tp;
      flags.push_back({s, tp});
      ranked.emplace_back(s, tp);
    }
    const std::size_t total = tps + std::size_t(rng.uniform_int(0, 5));
    if (total == 0) continue;
    ASSERT_NEAR(average_precision(flags, total), oracle::ap(ranked, total), 1e-12);
  }
}

TEST(Evaluate, PerfectAndEmpty) {
  Rng rng(3);
  const Corpus c = random_corpus(rng, 10);
  std::map<std::string, std::vector<Detection>> perfect, empty;
  for (const auto& [id, inst] : c.truth)
    for (const auto& g : inst) perfect[id].push_back(Detection{g.label, 0.9f, g.box, g.mask});
  for (const auto& [id, _] : c.truth) empty[id];
  const auto p = evaluate(perfect, c.gts()), e = evaluate(empty, c.gts());
  for (const auto* r : {&p.box, &p.mask})
    for (int cls = 1; cls <= kNumClasses; ++cls) {
      if (!r->present(cls)) continue;
      for (std::size_t k = 0; k < kNumThresholds; ++k) EXPECT_EQ(r->at(cls, k), 1.0);
    }
  EXPECT_EQ(*p.box.class_mean_ap(), 1.0);
  EXPECT_EQ(*e.mask.class_mean_ap(), 0.0);
  EXPECT_FALSE(p.box.present(4));  // no artery GT in this corpus
  EXPECT_NE(format_table(p.box).find("100.00"), std::string::npos);
}

TEST(Evaluate, UnknownImageIsDataError) {
  std::map<std::string, std::vector<Detection>> preds{{"ghost", {}}};
  EXPECT_THROW(evaluate(preds, {{"real", {}}}), DataError);
}

TEST(Evaluate, MatchesBruteForceOracle) {
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    Rng rng(seed);
    const Corpus c = random_corpus(rng, 20);
    const auto r = evaluate(c.preds, c.gts());
    for (const auto* rep : {&r.box, &r.mask})
      for (int cls = 1; cls <= kNumClasses; ++cls)
        for (std::size_t k = 0; k < kNumThresholds; ++k) {
          const auto want = oracle::corpus_ap(c.preds, c.truth, cls, 0.5 + 0.05 * double(k), rep == &r.mask);
          ASSERT_EQ(rep->present(cls), want.has_value());
          if (want) ASSERT_NEAR(rep->at(cls, k), *want, 1e-9) << "class " << cls << " threshold " << k;
        }
  }
}

TEST(Evaluate, MonotoneInThreshold) {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Corpus c = random_corpus(rng, 15);
    const auto r = evaluate(c.preds, c.gts());
    for (const auto* rep : {&r.box, &r.mask})
      for (int cls = 1; cls <= kNumClasses; ++cls)
        if (rep->present(cls))
          for (std::size_t k = 1; k < kNumThresholds; ++k) EXPECT_LE(rep->at(cls, k), rep->at(cls, k - 1));
  }
}

TEST(Evaluate, InvariantUnderMonotoneScoreTransform) {
  Rng rng(5);
  const Corpus c = random_corpus(rng, 20);
  auto moved = c.preds;
  for (auto& [_, dets] : moved)
    for (auto& d : dets) d.score = float(std::pow(double(d.score), 3.0) * 0.5 + 0.1);
  const auto a = evaluate(c.preds, c.gts()), b = evaluate(moved, c.gts());
  EXPECT_EQ(format_key_values(a.box), format_key_values(b.box));
  EXPECT_EQ(format_key_values(a.mask), format_key_values(b.mask));
}

TEST(Evaluate, ClassMeanSkipsAbsentClasses) {
  std::vector<GroundTruthImage> g{{"a", {gt(1, {0, 0, 8, 8}), gt(3, {10, 10, 20, 20})}}};
  std::map<std::string, std::vector<Detection>> p{{"a", {det(1, 0.9f, {0, 0, 8, 8})}}};
  const auto r = evaluate(p, g);
  EXPECT_EQ(r.box.at(1, 0), 1.0);
  EXPECT_EQ(r.box.at(3, 0), 0.0);
  EXPECT_EQ(*r.box.class_mean_at(0), 0.5);
}

TEST(Report, KeyValueFormat) {
  std::vector<GroundTruthImage> g{{"a", {gt(2, {0, 0, 8, 8})}}};
  std::map<std::string, std::vector<Detection>> p{{"a", {det(2, 0.9f, {0, 0, 8, 7})}}};
  const std::string kv = format_key_values(evaluate(p, g).box);
  EXPECT_NE(kv.find("box.muscle.0.50=1.0000\n"), std::string::npos) << kv;
  EXPECT_NE(kv.find("box.muscle.0.90=0.0000\n"), std::string::npos) << kv;
  EXPECT_NE(kv.find("box.muscle.AP=0.8000\n"), std::string::npos) << kv;
  EXPECT_NE(kv.find("box.nerve.0.50=absent\n"), std::string::npos) << kv;
  EXPECT_NE(kv.find("box.mean.AP=0.8000\n"), std::string::npos) << kv;
  std::size_t lines = 0;
  for (char ch : kv) lines += ch == '\n';
  EXPECT_EQ(lines, std::size_t(kNumClasses + 1) * (kNumThresholds + 1));
}
