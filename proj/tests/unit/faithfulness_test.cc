#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "test_util.h"
#include "xaib/error.h"
#include "xaib/faithfulness.h"

namespace xaib {
namespace {

using testing::BitEqual;
using testing::RandomTensor;

FlipConfig ConstantFill(float c, double step = 0.25, double max = 1.0) {
  FlipConfig cfg;
  cfg.fill = FillStrategy::kConstant;
  cfg.constant = c;
  cfg.step = step;
  cfg.max_fraction = max;
  return cfg;
}

FlipSamples RandomSamples(int n, int size, std::vector<int> labels, std::uint64_t seed) {
  return {RandomTensor({n, 3, size, size}, RngStream(seed)), std::move(labels)};
}

TEST(FlipPixelsTest, ZeroFlipsLeaveImageUnchanged) {
  const Tensor x = RandomTensor({3, 4, 4}, RngStream(1));
  const auto ranking = RankingFromMap(std::vector<float>(16, 1.0f));
  const std::vector<float> fill{9, 9, 9};
  EXPECT_TRUE(BitEqual(FlipPixels(x, ranking, 0, fill).data(), x.data()));
}

TEST(FlipPixelsTest, FlippingEverythingGivesConstantImage) {
  const Tensor x = RandomTensor({3, 4, 4}, RngStream(2));
  const auto ranking = RandomRanking(16, RngStream(3));
  const std::vector<float> fill{0.5f, 0.5f, 0.5f};
  const Tensor y = FlipPixels(x, ranking, 16, fill);
  for (float v : y.data()) EXPECT_EQ(v, 0.5f);
}

TEST(FlipPixelsTest, OnePixelOnTwoByTwo) {
  const Tensor x({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  const std::vector<std::int32_t> ranking{2, 0, 3, 1};
  const std::vector<float> fill{-1, -2};
  const Tensor y = FlipPixels(x, ranking, 1, fill);
  const std::vector<float> expected{1, 2, -1, 4, 5, 6, -2, 8};
  EXPECT_EQ(std::vector<float>(y.data().begin(), y.data().end()), expected);
}

TEST(FlipPixelsTest, OutOfRangeIsAnError) {
  const Tensor x({1, 2, 2});
  const std::vector<std::int32_t> ranking{0, 1, 2, 3};
  const std::vector<float> fill{0};
  EXPECT_THROW(FlipPixels(x, ranking, 5, fill), Error);
  const std::vector<std::int32_t> bad{7, 1, 2, 3};
  EXPECT_THROW(FlipPixels(x, bad, 1, fill), Error);
}

TEST(FlipPixelsTest, PrefixIdempotence) {
  const Tensor x = RandomTensor({3, 5, 5}, RngStream(4));
  const auto ranking = RandomRanking(25, RngStream(5));
  const std::vector<float> fill{0.1f, 0.2f, 0.3f};
  for (std::size_t n : {1u, 7u, 25u}) {
    const Tensor once = FlipPixels(x, ranking, n, fill);
    EXPECT_TRUE(BitEqual(FlipPixels(once, ranking, n, fill).data(), once.data()));
  }
}

TEST(FlipPixelsTest, PatchMode) {
  const Tensor x({1, 4, 4}, 1.0f);
  const std::vector<std::int32_t> cells{3, 0, 1, 2};
  const std::vector<float> fill{0};
  const Tensor y = FlipPixels(x, cells, 1, fill, 2);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) EXPECT_EQ(y.data()[r * 4 + c], (r >= 2 && c >= 2) ? 0.0f : 1.0f);
  }
}

TEST(FlipConfigTest, GridAndValidation) {
  FlipConfig cfg;
  cfg.dataset_mean = {0, 0, 0};
  const auto f = cfg.fractions();
  ASSERT_EQ(f.size(), 51u);
  for (std::size_t i = 1; i < f.size(); ++i) EXPECT_LT(f[i - 1], f[i]);
  EXPECT_EQ(f.front(), 0.0);
  EXPECT_NEAR(f.back(), 0.5, 1e-12);
  EXPECT_EQ(ConstantFill(0, 0.3, 1.0).fractions().size(), 4u);
  EXPECT_THROW(ConstantFill(0, 0.0, 0.5).validate(), Error);
  EXPECT_THROW(ConstantFill(0, 0.6, 0.5).validate(), Error);
  EXPECT_THROW(ConstantFill(0, 0.1, 1.5).validate(), Error);
  FlipConfig no_mean;
  EXPECT_THROW(no_mean.validate(), Error);
}

TEST(FlipConfigTest, FillValues) {
  const Tensor x({2, 1, 2}, {1, 3, 10, 20});
  FlipConfig cfg = ConstantFill(4);
  EXPECT_EQ(cfg.fill_values(x), (std::vector<float>{4, 4}));
  cfg.fill = FillStrategy::kImageMean;
  EXPECT_EQ(cfg.fill_values(x), (std::vector<float>{2, 15}));
  cfg.fill = FillStrategy::kDatasetMean;
  cfg.dataset_mean = {0.5f, -0.5f};
  EXPECT_EQ(cfg.fill_values(x), (std::vector<float>{0.5f, -0.5f}));
  EXPECT_EQ(ParseFill("per-image-mean"), FillStrategy::kImageMean);
  EXPECT_THROW(ParseFill("inpaint"), Error);
}

TEST(RankingTest, DescendingWithLowIndexTies) {
  EXPECT_EQ(RankingFromMap(std::vector<float>{1, 3, 3, 2}), (std::vector<std::int32_t>{1, 2, 3, 0}));
  const auto perm = RandomRanking(50, RngStream(6));
  EXPECT_EQ(std::set<std::int32_t>(perm.begin(), perm.end()).size(), 50u);
}

TEST(PfCurveTest, FractionZeroEqualsUnperturbedEvaluation) {
  const Model m(testing::SmallDeskSpec(3, 8), 7);
  const auto samples = RandomSamples(6, 8, {0, 1, 2, 0, 1, 2}, 8);
  std::vector<std::vector<std::int32_t>> rankings(6, RandomRanking(64, RngStream(9)));
  const auto curve = PfCurve(m, samples, rankings, ConstantFill(0), "test");
  ASSERT_EQ(curve.points.size(), 5u);
  const auto probs = PredictBatch(m, samples.images);
  double score = 0.0, acc = 0.0;
  for (int i = 0; i < 6; ++i) {
    score += probs[i][samples.labels[i]];
    acc += ArgMax(probs[i]) == samples.labels[i];
  }
  EXPECT_EQ(curve.points[0].fraction, 0.0);
  EXPECT_DOUBLE_EQ(curve.points[0].mean_score, score / 6);
  EXPECT_DOUBLE_EQ(curve.points[0].accuracy, acc / 6);
  EXPECT_EQ(curve.samples, 6u);
  EXPECT_EQ(curve.source, "test");
}

TEST(PfCurveTest, Errors) {
  const Model m(testing::SmallDeskSpec(3, 8), 7);
  EXPECT_THROW(PfCurve(m, FlipSamples{Tensor({0, 3, 8, 8}), {}}, {}, ConstantFill(0)), Error);
  const auto samples = RandomSamples(2, 8, {0, 1}, 10);
  std::vector<std::vector<std::int32_t>> one(1, RandomRanking(64, RngStream(1)));
  EXPECT_THROW(PfCurve(m, samples, one, ConstantFill(0)), Error);
}

TEST(PfCurveTest, FullyFlippedSamplesShareOnePrediction) {
  const Model m(testing::SmallDeskSpec(3, 8), 11);
  const std::vector<int> labels{0, 1, 2, 0, 1, 2, 0, 0, 1};
  const auto samples = RandomSamples(9, 8, labels, 12);
  std::vector<std::vector<std::int32_t>> rankings;
  for (int i = 0; i < 9; ++i) rankings.push_back(RandomRanking(64, RngStream(20 + i)));
  const auto curve = PfCurve(m, samples, rankings, ConstantFill(0.3f));
  const Tensor flat({1, 3, 8, 8}, 0.3f);
  const auto probs = PredictBatch(m, flat).front();
  EXPECT_NEAR(curve.points.back().fraction, 1.0, 1e-12);
  double score = 0.0, acc = 0.0;
  for (int label : labels) {
    score += probs[label];
    acc += ArgMax(probs) == label;
  }
  EXPECT_NEAR(curve.points.back().mean_score, score / 9, 1e-12);
  EXPECT_NEAR(curve.points.back().accuracy, acc / 9, 1e-12);
}

TEST(PfCurveTest, MarginRankingGivesNonIncreasingScore) {
  constexpr int kPixels = 36;
  const auto w = RandomTensor({2, kPixels}, RngStream(30));
  std::vector<float> weights(w.data().begin(), w.data().end());
  const Model m = testing::LinearModel(1, 6, 6, weights, {0.2f, -0.1f});
  const auto mag = RandomTensor({kPixels}, RngStream(31), 0.1f, 1.0f);
  Tensor image({1, 1, 6, 6});
  std::vector<float> contribution(kPixels);
  for (int p = 0; p < kPixels; ++p) {
    const float dw = weights[kPixels + p] - weights[p];
    image.data()[p] = dw >= 0 ? mag.data()[p] : -mag.data()[p];
    contribution[p] = dw * image.data()[p];
  }
  const FlipSamples samples{image, {1}};
  const std::vector<std::vector<std::int32_t>> rankings{RankingFromMap(contribution)};
  const auto curve = PfCurve(m, samples, rankings, ConstantFill(0.0f, 1.0 / kPixels, 1.0));
  ASSERT_EQ(curve.points.size(), static_cast<std::size_t>(kPixels + 1));
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    EXPECT_LE(curve.points[i].mean_score, curve.points[i - 1].mean_score + 1e-12) << "step " << i;
  }
  EXPECT_LT(curve.points.back().mean_score, curve.points.front().mean_score);
}

TEST(FlippingCurveTest, TrapezoidArea) {
  FlippingCurve c;
  c.points = {{0.0, 1.0, 1.0}, {0.5, 0.5, 0.0}, {1.0, 0.0, 0.0}};
  EXPECT_DOUBLE_EQ(c.score_area(), 0.5);
  FlippingCurve base = c;
  base.points[1].mean_score = 0.6;
  base.points[2].mean_score = 0.0;
  EXPECT_DOUBLE_EQ(BelowFraction(c, base), 0.5);
}

TEST(RandomBaselineTest, SingleSeedMatchesExplicitRankings) {
  const Model m(testing::SmallDeskSpec(3, 8), 13);
  const auto samples = RandomSamples(4, 8, {0, 1, 2, 0}, 14);
  const std::vector<std::uint64_t> seeds{7};
  const auto cfg = ConstantFill(0.0f);
  const auto baseline = PfRandomBaseline(m, samples, cfg, seeds);
  std::vector<std::vector<std::int32_t>> rankings;
  for (std::size_t i = 0; i < 4; ++i) rankings.push_back(BaselineRanking(64, 7, i));
  const auto direct = PfCurve(m, samples, rankings, cfg);
  ASSERT_EQ(baseline.points.size(), direct.points.size());
  for (std::size_t i = 0; i < direct.points.size(); ++i) {
    EXPECT_EQ(baseline.points[i].mean_score, direct.points[i].mean_score);
    EXPECT_EQ(baseline.points[i].accuracy, direct.points[i].accuracy);
    EXPECT_EQ(baseline.score_stderr[i], 0.0);
  }
  ASSERT_EQ(baseline.per_seed.size(), 1u);
}

TEST(RandomBaselineTest, MeanAndStderrOverSeeds) {
  const Model m(testing::SmallDeskSpec(3, 8), 13);
  const auto samples = RandomSamples(3, 8, {0, 1, 2}, 15);
  const std::vector<std::uint64_t> seeds{0, 1, 2, 3};
  const auto baseline = PfRandomBaseline(m, samples, ConstantFill(0.0f), seeds);
  ASSERT_EQ(baseline.per_seed.size(), 4u);
  for (std::size_t i = 0; i < baseline.points.size(); ++i) {
    double sum = 0.0;
    for (const auto& c : baseline.per_seed) sum += c.points[i].mean_score;
    const double mean = sum / 4;
    double ss = 0.0;
    for (const auto& c : baseline.per_seed) ss += (c.points[i].mean_score - mean) * (c.points[i].mean_score - mean);
    EXPECT_NEAR(baseline.points[i].mean_score, mean, 1e-12);
    EXPECT_NEAR(baseline.score_stderr[i], std::sqrt(ss / 3 / 4), 1e-12);
  }
  EXPECT_NEAR(baseline.score_stderr[0], 0.0, 1e-15);
}

PfMcdConfig SmallPfMcd(float rate) {
  PfMcdConfig cfg;
  cfg.mcd.samples = 8;
  cfg.mcd.rate_override = rate;
  cfg.ig.steps = 4;
  cfg.random_seeds = {0, 1};
  cfg.flip = ConstantFill(0.0f, 0.25, 0.5);
  return cfg;
}

TEST(PfMcdTest, BundleShape) {
  const Model m(testing::SmallDeskSpec(3, 8), 16);
  const auto samples = RandomSamples(3, 8, {1, 1, 1}, 17);
  const auto bundle = PfMcdExperiment(m, samples, SmallPfMcd(0.5f));
  ASSERT_EQ(bundle.curves.size(), 9u);
  EXPECT_EQ(bundle.summaries.size(), 9u);
  EXPECT_EQ(bundle.random.per_seed.size(), 2u);
  EXPECT_EQ(bundle.curves[0].source, "gradient q=0.25");
  EXPECT_EQ(bundle.explained_labels.size(), 3u);
  for (const auto& c : bundle.curves) {
    ASSERT_EQ(c.points.size(), 3u);
    EXPECT_EQ(c.points[0].mean_score, bundle.random.points[0].mean_score);
  }
}

TEST(PfMcdTest, ZeroDropoutMakesQuantileCurvesCoincide) {
  const Model m(testing::SmallDeskSpec(3, 8), 18);
  const auto samples = RandomSamples(2, 8, {2, 2}, 19);
  const auto bundle = PfMcdExperiment(m, samples, SmallPfMcd(0.0f));
  for (std::size_t method = 0; method < 3; ++method) {
    for (std::size_t q = 1; q < 3; ++q) {
      const auto& a = bundle.curves[method * 3];
      const auto& b = bundle.curves[method * 3 + q];
      for (std::size_t i = 0; i < a.points.size(); ++i) EXPECT_EQ(a.points[i].mean_score, b.points[i].mean_score);
    }
  }
}

TEST(PfMcdTest, Errors) {
  const Model m(testing::SmallDeskSpec(3, 8), 18);
  EXPECT_THROW(PfMcdExperiment(m, RandomSamples(2, 8, {0, 1}, 20), SmallPfMcd(0.5f)), Error);
  EXPECT_THROW(PfMcdExperiment(m, FlipSamples{Tensor({0, 3, 8, 8}), {}}, SmallPfMcd(0.5f)), Error);
}

}  // namespace
}  // namespace xaib
