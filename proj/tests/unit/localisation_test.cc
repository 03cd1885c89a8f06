#include <gtest/gtest.h>

#include <cmath>

#include "metric_oracles.h"
#include "test_util.h"
#include "xaib/error.h"
#include "xaib/localisation.h"

namespace xaib {
namespace {

using namespace localisation;
using Mask = std::vector<std::uint8_t>;
using Map = std::vector<float>;

// 2x2 helpers: pixel (r, c) has linear index 2r + c.
Mask MaskOf(std::initializer_list<int> indices, std::size_t n = 4) {
  Mask m(n, 0);
  for (int i : indices) m[i] = 1;
  return m;
}

struct Instance {
  Map map;
  Mask mask;
};

// Random sizes up to 32x32; every third instance draws values from a tiny
// alphabet so ties are common.
Instance RandomInstance(RngStream rng) {
  const int h = 1 + static_cast<int>(rng.next_below(32)), w = 2 + static_cast<int>(rng.next_below(31));
  const bool tie_heavy = rng.next_below(3) == 0;
  Instance in;
  for (int i = 0; i < h * w; ++i) {
    in.map.push_back(tie_heavy ? static_cast<float>(rng.next_below(4)) - 1.0f
                               : static_cast<float>(rng.next_normal()));
    in.mask.push_back(rng.next_uniform() < 0.3 ? 1 : 0);
  }
  in.mask[0] = 1;
  in.mask[1] = 0;
  return in;
}

TEST(PointingGameTest, Examples) {
  EXPECT_EQ(PointingGame(Map{0, 1, 0, 0}, MaskOf({1})), 1.0);
  EXPECT_EQ(PointingGame(Map{2, 1, 0, 0}, MaskOf({1})), 0.0);
  EXPECT_EQ(PointingGame(Map{5, 5, 5, 5}, MaskOf({0})), 1.0);
  EXPECT_EQ(PointingGame(Map{5, 5, 5, 5}, MaskOf({1})), 0.0);
  EXPECT_THROW(PointingGame(Map{1, 2, 3, 4}, MaskOf({})), Error);
  EXPECT_THROW(PointingGame(Map{1, 2, 3}, MaskOf({0})), Error);
}

TEST(AttributionLocalisationTest, Examples) {
  EXPECT_DOUBLE_EQ(AttributionLocalisation(Map{1, 1, 1, 1}, MaskOf({0, 3})), 0.5);
  EXPECT_DOUBLE_EQ(AttributionLocalisation(Map{3, -1, 1, 0}, MaskOf({0})), 0.75);
  EXPECT_THROW(AttributionLocalisation(Map{0, 0, 0, 0}, MaskOf({0})), Error);
  EXPECT_THROW(AttributionLocalisation(Map{-1, -2, 0, 0}, MaskOf({0})), Error);
}

TEST(TopKIntersectionTest, Examples) {
  EXPECT_EQ(TopKIntersection(Map{4, 3, 2, 1}, MaskOf({0, 1}), 2), 1.0);
  EXPECT_EQ(TopKIntersection(Map{4, 3, 2, 1}, MaskOf({2, 3}), 2), 0.0);
  EXPECT_EQ(TopKIntersection(Map{7, 7, 7, 7}, MaskOf({0, 3}), 2), 0.5);
  EXPECT_THROW(TopKIntersection(Map{4, 3, 2, 1}, MaskOf({0}), 0), Error);
  EXPECT_THROW(TopKIntersection(Map{4, 3, 2, 1}, MaskOf({0}), 5), Error);
}

TEST(RelevanceRankAccuracyTest, Examples) {
  const Mask mask = MaskOf({1, 2});
  EXPECT_EQ(RelevanceRankAccuracy(Map{0, 1, 1, 0}, mask), 1.0);
  EXPECT_EQ(RelevanceRankAccuracy(Map{1, 0, 0, 1}, mask), 0.0);
  EXPECT_THROW(RelevanceRankAccuracy(Map{1, 0, 0, 1}, MaskOf({})), Error);
  RngStream rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    Map map;
    Mask m;
    for (int i = 0; i < 16; ++i) {
      map.push_back(static_cast<float>(rng.next_uniform()));
      m.push_back(rng.next_uniform() < 0.4);
    }
    m[5] = 1;
    EXPECT_EQ(RelevanceRankAccuracy(map, m), testing::OracleRelevanceRank(map, m));
  }
}

TEST(AucTest, Examples) {
  EXPECT_EQ(Auc(Map{3, 3, 1, 0}, Mask{1, 0, 1, 0}), 0.625);
  EXPECT_EQ(testing::OraclePairwiseAuc(Map{3, 3, 1, 0}, Mask{1, 0, 1, 0}), 0.625);
  EXPECT_EQ(Auc(Map{1, 0, 0, 1}, MaskOf({0, 3})), 1.0);
  EXPECT_EQ(Auc(Map{0, 1, 1, 0}, MaskOf({0, 3})), 0.0);
  EXPECT_EQ(Auc(Map{2, 2, 2, 2}, MaskOf({0, 3})), 0.5);
  EXPECT_THROW(Auc(Map{1, 2, 3, 4}, MaskOf({})), Error);
  EXPECT_THROW(Auc(Map{1, 2, 3, 4}, MaskOf({0, 1, 2, 3})), Error);
}

TEST(MetricOracleTest, RandomInstancesMatchBruteForce) {
  RngStream root(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto in = RandomInstance(root.derive(trial));
    const auto k = std::min<std::size_t>(1 + trial * 7 % 50, in.map.size());
    EXPECT_EQ(PointingGame(in.map, in.mask), testing::OraclePointingGame(in.map, in.mask));
    EXPECT_EQ(TopKIntersection(in.map, in.mask, k), testing::OracleTopK(in.map, in.mask, k));
    EXPECT_EQ(RelevanceRankAccuracy(in.map, in.mask), testing::OracleRelevanceRank(in.map, in.mask));
    EXPECT_NEAR(Auc(in.map, in.mask), testing::OraclePairwiseAuc(in.map, in.mask), 1e-9);
    bool positive = false;
    for (float v : in.map) positive |= v > 0;
    if (positive) {
      EXPECT_NEAR(AttributionLocalisation(in.map, in.mask),
                  testing::OracleAttributionLocalisation(in.map, in.mask), 1e-9);
    }
  }
}

TEST(MetricPropertyTest, ScaleInvariance) {
  RngStream root(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto in = RandomInstance(root.derive(trial));
    for (auto& v : in.map) v = std::abs(v) + 0.01f;
    for (float c : {0.5f, 4.0f}) {
      Map scaled = in.map;
      for (auto& v : scaled) v *= c;
      EXPECT_EQ(PointingGame(scaled, in.mask), PointingGame(in.map, in.mask));
      EXPECT_EQ(RelevanceRankAccuracy(scaled, in.mask), RelevanceRankAccuracy(in.map, in.mask));
      const auto k = std::min<std::size_t>(3, in.map.size());
      EXPECT_EQ(TopKIntersection(scaled, in.mask, k), TopKIntersection(in.map, in.mask, k));
      EXPECT_EQ(Auc(scaled, in.mask), Auc(in.map, in.mask));
      EXPECT_NEAR(AttributionLocalisation(scaled, in.mask), AttributionLocalisation(in.map, in.mask), 1e-6);
    }
  }
}

TEST(MetricPropertyTest, RraIsTopKAtMaskSizeAndPointingImpliesTopOne) {
  RngStream root(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto in = RandomInstance(root.derive(trial));
    std::size_t size = 0;
    for (auto v : in.mask) size += v;
    EXPECT_EQ(RelevanceRankAccuracy(in.map, in.mask), TopKIntersection(in.map, in.mask, size));
    if (PointingGame(in.map, in.mask) == 1.0) EXPECT_EQ(TopKIntersection(in.map, in.mask, 1), 1.0);
    for (double s : {PointingGame(in.map, in.mask), TopKIntersection(in.map, in.mask, 1), Auc(in.map, in.mask)}) {
      EXPECT_GE(s, 0.0);
      EXPECT_LE(s, 1.0);
    }
  }
}

SaliencyMap MapOf(Map values, int h, int w) {
  SaliencyMap m;
  m.height = h;
  m.width = w;
  m.values = std::move(values);
  return m;
}

TEST(EvaluateLocalisationTest, MeansSkipsAndConfig) {
  const std::vector<SaliencyMap> maps{MapOf({0, 1, 0, 0}, 2, 2), MapOf({2, 1, 0, 0}, 2, 2)};
  const std::vector<BinaryMask> masks{{2, 2, MaskOf({1})}, {2, 2, MaskOf({1})}};
  const auto results = EvaluateLocalisation(maps, masks);
  ASSERT_EQ(results.size(), 5u);
  EXPECT_EQ(results[0].metric, LocalisationMetric::kPointingGame);
  EXPECT_DOUBLE_EQ(results[0].mean, 0.5);
  EXPECT_EQ(results[0].count, 2u);
  EXPECT_EQ(results[2].config.top_k, kDefaultTopK);

  const auto single = EvaluateLocalisation(std::span(maps).first(1), std::span(masks).first(1));
  EXPECT_DOUBLE_EQ(single[0].mean, 1.0);

  // The all-zero map has no positive mass: attribution localisation skips it.
  const std::vector<SaliencyMap> with_zero{MapOf({0, 1, 0, 0}, 2, 2), MapOf({0, 0, 0, 0}, 2, 2)};
  const auto skipped = EvaluateLocalisation(with_zero, masks);
  EXPECT_EQ(skipped[1].skipped, 1u);
  EXPECT_EQ(skipped[1].count, 1u);
  EXPECT_FALSE(skipped[1].scores[1].has_value());
  EXPECT_NE(skipped[1].skip_reasons[1].find("degenerate"), std::string::npos);
  EXPECT_DOUBLE_EQ(skipped[1].mean, 1.0);

  const std::vector<SaliencyMap> zeros{MapOf({0, 0, 0, 0}, 2, 2)};
  EXPECT_THROW(EvaluateLocalisation(zeros, std::span(masks).first(1)), Error);
  EXPECT_THROW(EvaluateLocalisation(maps, std::span(masks).first(1)), Error);
}

TEST(EvaluateLocalisationTest, MeanIsArithmeticMeanOfScores) {
  RngStream root(5);
  std::vector<SaliencyMap> maps;
  std::vector<BinaryMask> masks;
  for (int i = 0; i < 40; ++i) {
    RngStream rng = root.derive(i);
    Map v;
    Mask m;
    for (int p = 0; p < 64; ++p) {
      v.push_back(static_cast<float>(rng.next_uniform()));
      m.push_back(p % 5 == i % 5);
    }
    maps.push_back(MapOf(v, 8, 8));
    masks.push_back({8, 8, m});
  }
  LocalisationConfig cfg;
  cfg.top_k = 10;
  for (const auto& r : EvaluateLocalisation(maps, masks, cfg)) {
    double sum = 0.0;
    for (const auto& s : r.scores) sum += *s;
    EXPECT_NEAR(r.mean, sum / 40.0, 1e-9) << MetricId(r.metric);
  }
}

TEST(SelectMaskTest, UnionAndParts) {
  SegMask seg(1, 4);
  seg.parts = {Part::kBackground, Part::kHead, Part::kThorax, Part::kAbdomen};
  EXPECT_EQ(SelectMask(seg, {}).inside, (Mask{0, 1, 1, 1}));
  LocalisationConfig cfg;
  cfg.parts = {Part::kHead, Part::kAbdomen};
  EXPECT_EQ(SelectMask(seg, cfg).inside, (Mask{0, 1, 0, 1}));
}

}  // namespace
}  // namespace xaib
