#include <gtest/gtest.h>

#include <cmath>

#include "reference_net.h"
#include "test_util.h"
#include "xaib/attribution.h"
#include "xaib/error.h"
#include "xaib/raster_io.h"

namespace xaib {
namespace {

using testing::BitEqual;
using testing::RandomTensor;

constexpr int kC = 2, kH = 3, kW = 4, kPix = kH * kW;

// Two-class linear model on (2,3,4) inputs with distinct weights per class.
Model TwoClassLinear(std::vector<float>* class1_weights = nullptr) {
  RngStream rng(21);
  std::vector<float> w(2 * kC * kPix);
  for (auto& v : w) v = static_cast<float>(rng.next_uniform() * 2.0 - 1.0);
  if (class1_weights) class1_weights->assign(w.begin() + kC * kPix, w.end());
  return testing::LinearModel(kC, kH, kW, w, {0.1f, -0.2f});
}

std::vector<double> ChannelSum(const std::vector<double>& per_channel) {
  std::vector<double> out(kPix, 0.0);
  for (int c = 0; c < kC; ++c) {
    for (int p = 0; p < kPix; ++p) out[p] += per_channel[c * kPix + p];
  }
  return out;
}

TEST(GradientTest, LinearModelMapIsAggregatedWeights) {
  std::vector<float> w1;
  const Model m = TwoClassLinear(&w1);
  const Tensor x = RandomTensor({kC, kH, kW}, RngStream(1));
  const auto expected = ChannelSum(std::vector<double>(w1.begin(), w1.end()));
  const auto raw = Gradient(m, x, 1, Aggregation::kRawSum);
  const auto pos = Gradient(m, x, 1, Aggregation::kPositive);
  const auto abs = Gradient(m, x, 1, Aggregation::kAbsolute);
  ASSERT_EQ(raw.values.size(), static_cast<std::size_t>(kPix));
  EXPECT_EQ(raw.height, kH);
  EXPECT_EQ(raw.width, kW);
  for (int p = 0; p < kPix; ++p) {
    EXPECT_NEAR(raw.values[p], expected[p], 1e-6);
    EXPECT_NEAR(pos.values[p], std::max(0.0, expected[p]), 1e-6);
    EXPECT_NEAR(abs.values[p], std::abs(expected[p]), 1e-6);
    EXPECT_GE(abs.values[p], 0.0f);
  }
  EXPECT_EQ(raw.method, Method::kGradient);
  EXPECT_EQ(raw.label, 1);
  EXPECT_EQ(pos.aggregation, Aggregation::kPositive);
}

TEST(GradientTest, InvalidLabelIsAnError) {
  const Model m = TwoClassLinear();
  EXPECT_THROW(Gradient(m, Tensor({kC, kH, kW}), 2, Aggregation::kRawSum), Error);
  EXPECT_THROW(Gradient(m, Tensor({kC, kH, kW}), -1, Aggregation::kRawSum), Error);
  EXPECT_THROW(Gradient(m, Tensor({kC, kH, kH}), 0, Aggregation::kRawSum), Error);
}

TEST(GradientTest, AgreesWithFiniteDifferencesOfReferenceNet) {
  const Model m(testing::SmallDeskSpec(3, 8), 31);
  const testing::ReferenceNet ref(m);
  constexpr double kH3 = 1e-3;
  for (std::uint64_t trial = 0; trial < 3; ++trial) {
    const Tensor x = RandomTensor({3, 8, 8}, RngStream(40 + trial));
    const int label = static_cast<int>(trial % 3);
    const Tensor g = InputGradient(m, x, label);
    std::vector<double> xd(x.data().begin(), x.data().end());
    testing::ActivationPattern base;
    ref.Logits(xd, &base);
    std::vector<double> fd(xd.size());
    std::vector<bool> kink(xd.size(), false);
    double fd_inf = 0.0;
    for (std::size_t i = 0; i < xd.size(); ++i) {
      auto plus = xd, minus = xd;
      plus[i] += kH3;
      minus[i] -= kH3;
      testing::ActivationPattern pp, pm;
      const double lp = ref.Logits(plus, &pp)[label], lm = ref.Logits(minus, &pm)[label];
      kink[i] = !(pp == base) || !(pm == base);
      fd[i] = (lp - lm) / (2 * kH3);
      fd_inf = std::max(fd_inf, std::abs(fd[i]));
    }
    std::size_t checked = 0;
    for (std::size_t i = 0; i < xd.size(); ++i) {
      if (kink[i]) continue;
      ++checked;
      const double denom = std::max({std::abs(fd[i]), std::abs(double{g.data()[i]}), 1e-3 * fd_inf});
      EXPECT_LE(std::abs(g.data()[i] - fd[i]) / denom, 1e-3) << "coordinate " << i;
    }
    EXPECT_GT(checked, xd.size() / 2);
  }
}

TEST(GradientTest, HeadBiasShiftLeavesMapUnchanged) {
  Model m(testing::SmallDeskSpec(3, 8), 32);
  const Tensor x = RandomTensor({3, 8, 8}, RngStream(33));
  const auto before = Gradient(m, x, 1, Aggregation::kRawSum);
  m.parameter("head.bias").data()[1] += 5.0f;
  const auto after = Gradient(m, x, 1, Aggregation::kRawSum);
  EXPECT_TRUE(BitEqual(before.values, after.values));
}

TEST(GradientXInputTest, ZeroImageGivesZeroMap) {
  const Model m(testing::SmallDeskSpec(3, 8), 34);
  const auto map = GradientXInput(m, Tensor({3, 8, 8}), 0, Aggregation::kRawSum);
  for (float v : map.values) EXPECT_EQ(v, 0.0f);
}

TEST(GradientXInputTest, LinearModelIsWeightsTimesInput) {
  std::vector<float> w1;
  const Model m = TwoClassLinear(&w1);
  const Tensor x = RandomTensor({kC, kH, kW}, RngStream(2));
  std::vector<double> prod(w1.size());
  for (std::size_t i = 0; i < w1.size(); ++i) prod[i] = double{w1[i]} * x.data()[i];
  const auto expected = ChannelSum(prod);
  const auto map = GradientXInput(m, x, 1, Aggregation::kRawSum);
  for (int p = 0; p < kPix; ++p) EXPECT_NEAR(map.values[p], expected[p], 1e-6);
}

TEST(GradientXInputTest, ComposesGradientAndImagePerChannel) {
  const Model m(testing::SmallDeskSpec(3, 8), 35);
  const Tensor x = RandomTensor({3, 8, 8}, RngStream(36));
  const Tensor g = InputGradient(m, x, 2);
  Tensor prod({3, 8, 8});
  for (std::size_t i = 0; i < prod.numel(); ++i) prod.data()[i] = g.data()[i] * x.data()[i];
  for (auto agg : {Aggregation::kRawSum, Aggregation::kPositive, Aggregation::kAbsolute}) {
    const auto expected = Aggregate(prod, agg, Method::kGradientXInput, 2);
    const auto map = GradientXInput(m, x, 2, agg);
    EXPECT_TRUE(BitEqual(expected.values, map.values)) << AggregationName(agg);
  }
}

TEST(IntegratedGradientsTest, ImageEqualToBaselineGivesZero) {
  const Model m(testing::SmallDeskSpec(3, 8), 37);
  const Tensor x = RandomTensor({3, 8, 8}, RngStream(38));
  for (int steps : {1, 4, 64}) {
    IGConfig cfg;
    cfg.baseline = x.clone();
    cfg.steps = steps;
    const auto map = IntegratedGradients(m, x, 0, cfg, Aggregation::kRawSum);
    for (float v : map.values) EXPECT_EQ(v, 0.0f);
  }
}

TEST(IntegratedGradientsTest, LinearClosedForm) {
  std::vector<float> w1;
  const Model m = TwoClassLinear(&w1);
  const Tensor x = RandomTensor({kC, kH, kW}, RngStream(3));
  const Tensor b = RandomTensor({kC, kH, kW}, RngStream(4));
  for (int steps : {1, 4, 64}) {
    IGConfig cfg{b, steps};
    const Tensor raw = RawAttribution(m, x, 1, Method::kIntegratedGradients, cfg);
    for (std::size_t i = 0; i < raw.numel(); ++i) {
      EXPECT_NEAR(raw.data()[i], double{w1[i]} * (double{x.data()[i]} - b.data()[i]), 1e-5) << "m=" << steps;
    }
  }
}

TEST(IntegratedGradientsTest, ZeroStepsIsAnError) {
  const Model m = TwoClassLinear();
  IGConfig cfg;
  cfg.steps = 0;
  EXPECT_THROW(IntegratedGradients(m, Tensor({kC, kH, kW}), 0, cfg, Aggregation::kRawSum), Error);
  cfg.steps = 4;
  cfg.baseline = Tensor({1, 2, 3});
  EXPECT_THROW(IntegratedGradients(m, Tensor({kC, kH, kW}), 0, cfg, Aggregation::kRawSum), Error);
}

TEST(IntegratedGradientsTest, CompletenessOnSmallCnn) {
  const Model m(testing::SmallDeskSpec(3, 8), 39);
  for (std::uint64_t i = 0; i < 3; ++i) {
    const Tensor x = RandomTensor({3, 8, 8}, RngStream(50 + i));
    const int label = PredictedLabel(m, x);
    IGConfig cfg;
    cfg.steps = 256;
    const Tensor raw = RawAttribution(m, x, label, Method::kIntegratedGradients, cfg);
    double total = 0.0;
    for (float v : raw.data()) total += v;
    const double delta = double{TargetLogit(m, x, label)} - TargetLogit(m, Tensor({3, 8, 8}), label);
    EXPECT_LE(std::abs(total - delta), 1e-2 * std::abs(delta) + 1e-4);
  }
}

TEST(AttributionTest, RepeatedCallsAreIdentical) {
  const Model m(testing::SmallDeskSpec(3, 8), 40);
  const Tensor x = RandomTensor({3, 8, 8}, RngStream(41));
  for (auto method : kAllMethods) {
    const auto a = Explain(m, x, 1, method, Aggregation::kPositive);
    const auto b = Explain(m, x, 1, method, Aggregation::kPositive);
    EXPECT_TRUE(BitEqual(a.values, b.values)) << MethodName(method);
  }
}

TEST(AttributionTest, SampledRowsMatchSingleStreamCalls) {
  const Model m(testing::SmallDeskSpec(3, 8), 42);
  const Tensor x = RandomTensor({3, 8, 8}, RngStream(43));
  std::vector<RngStream> streams;
  for (int t = 0; t < 5; ++t) streams.emplace_back(100 + t);
  IGConfig ig;
  ig.steps = 8;
  for (auto method : kAllMethods) {
    const auto batch = RawAttributionSamples(m, x, 0, method, ig, streams);
    ASSERT_EQ(batch.size(), streams.size());
    for (std::size_t t = 0; t < streams.size(); ++t) {
      const auto single = RawAttribution(m, x, 0, method, ig, DropoutControl::Sampled(streams[t]));
      EXPECT_TRUE(BitEqual(batch[t].data(), single.data())) << MethodName(method) << " t=" << t;
    }
    const auto zero_rate = RawAttributionSamples(m, x, 0, method, ig, streams, 0.0f);
    const auto det = RawAttribution(m, x, 0, method, ig);
    for (const auto& r : zero_rate) EXPECT_TRUE(BitEqual(r.data(), det.data())) << MethodName(method);
  }
}

TEST(AttributionTest, PredictedLabelIsDeterministicArgmax) {
  const auto m = testing::LinearModel(1, 1, 2, {1.0f, 0.0f, 0.0f, 1.0f}, {0.0f, 0.0f});
  EXPECT_EQ(PredictedLabel(m, Tensor({1, 1, 2}, {2.0f, 1.0f})), 0);
  EXPECT_EQ(PredictedLabel(m, Tensor({1, 1, 2}, {1.0f, 2.0f})), 1);
  EXPECT_EQ(PredictedLabel(m, Tensor({1, 1, 2}, {1.0f, 1.0f})), 0);
}

TEST(AttributionTest, NamesParseBothWays) {
  for (auto method : kAllMethods) EXPECT_EQ(ParseMethod(MethodName(method)), method);
  EXPECT_EQ(ParseMethod("ig"), Method::kIntegratedGradients);
  EXPECT_EQ(ParseMethod("gxi"), Method::kGradientXInput);
  EXPECT_THROW(ParseMethod("smoothgrad"), Error);
  for (auto agg : {Aggregation::kRawSum, Aggregation::kPositive, Aggregation::kAbsolute}) {
    EXPECT_EQ(ParseAggregation(AggregationName(agg)), agg);
  }
}

TEST(SaliencyFileTest, RoundTripIsBitIdentical) {
  const Model m(testing::SmallDeskSpec(3, 8), 44);
  auto map = Explain(m, RandomTensor({3, 8, 8}, RngStream(45)), 2, Method::kGradientXInput,
                     Aggregation::kAbsolute);
  map.lineage = "mcd seed=7";
  const auto dir = testing::ScratchDir("saliency");
  WriteSaliencyMap(dir / "img0_gxi", map, R"({"seed":7})");
  EXPECT_TRUE(std::filesystem::exists(dir / "img0_gxi.png"));
  const auto back = ReadSaliencyMap(dir / "img0_gxi");
  EXPECT_TRUE(BitEqual(back.values, map.values));
  EXPECT_EQ(back.height, 8);
  EXPECT_EQ(back.width, 8);
  EXPECT_EQ(back.method, Method::kGradientXInput);
  EXPECT_EQ(back.label, 2);
  EXPECT_EQ(back.aggregation, Aggregation::kAbsolute);
  EXPECT_EQ(back.lineage, "mcd seed=7");
  const auto sidecar = ReadFileText(dir / "img0_gxi.json");
  EXPECT_NE(sidecar.find("run_config"), std::string::npos);
}

}  // namespace
}  // namespace xaib
