#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xaib/attribution.h"
#include "xaib/model.h"
#include "xaib/uncertainty.h"

namespace xaib {

enum class FillStrategy { kConstant, kDatasetMean, kImageMean };

const char* FillName(FillStrategy f);
FillStrategy ParseFill(const std::string& name);

struct FlipConfig {
  FillStrategy fill = FillStrategy::kDatasetMean;
  float constant = 0.0f;                   // kConstant
  std::vector<float> dataset_mean;         // kDatasetMean, per channel (normalized space)
  double step = 0.01;                      // fraction of pixels per iteration
  double max_fraction = 0.5;
  int patch = 1;                           // >1 flips patch×patch blocks; rankings then index blocks

  void validate() const;
  // floor(max/step) + 1 fractions starting at 0.
  std::vector<double> fractions() const;
  // Per-channel fill for one image (C,H,W).
  std::vector<float> fill_values(const Tensor& image) const;
};

// Pixels ranked most-relevant first (value descending, ties to the lower index).
std::vector<std::int32_t> RankingFromMap(std::span<const float> values);
std::vector<std::int32_t> RandomRanking(std::int32_t pixels, RngStream rng);

// Replaces the first n ranked pixels (all channels) by `fill`. With patch>1
// the ranking indexes patch cells of the (ceil(H/p) x ceil(W/p)) grid.
Tensor FlipPixels(const Tensor& image, std::span<const std::int32_t> ranking, std::size_t n,
                  std::span<const float> fill, int patch = 1);

struct CurvePoint {
  double fraction = 0.0;
  double mean_score = 0.0;  // mean softmax probability of the true class
  double accuracy = 0.0;
};

struct FlippingCurve {
  std::string source;  // "gradient q=0.50", "random", "oracle", ...
  std::vector<CurvePoint> points;
  std::size_t samples = 0;
  // Random baselines only: per-seed curves and pointwise standard errors.
  std::vector<FlippingCurve> per_seed;
  std::vector<double> score_stderr;
  std::vector<double> accuracy_stderr;

  // Trapezoidal area under the mean-score curve.
  double score_area() const;
};

struct FlipSamples {
  Tensor images;            // (N,C,H,W)
  std::vector<int> labels;  // true classes

  std::size_t size() const { return labels.size(); }
};

// Deterministic-model (dropout inactive) evaluation at every step fraction.
FlippingCurve PfCurve(const Model& model, const FlipSamples& samples,
                      std::span<const std::vector<std::int32_t>> rankings, const FlipConfig& cfg,
                      const std::string& source = "saliency");

// Mean over seeds of curves with per-(seed, sample) random permutations.
FlippingCurve PfRandomBaseline(const Model& model, const FlipSamples& samples, const FlipConfig& cfg,
                               std::span<const std::uint64_t> seeds);
// The permutation PfRandomBaseline uses for (seed, sample).
std::vector<std::int32_t> BaselineRanking(std::int32_t cells, std::uint64_t seed, std::size_t sample);

struct PfMcdConfig {
  std::vector<Method> methods{Method::kGradient, Method::kGradientXInput, Method::kIntegratedGradients};
  std::vector<double> quantiles{0.25, 0.5, 0.75};
  MCDConfig mcd{kFlippingSamples, std::nullopt, 0};
  IGConfig ig;
  Aggregation aggregation = Aggregation::kAbsolute;
  std::vector<std::uint64_t> random_seeds;  // empty = 20 seeds 0..19
  FlipConfig flip;
};

struct CurveSummary {
  std::string source;
  double below_random_fraction = 0.0;  // steps after the first where score < random mean
  double score_area = 0.0;
};

struct PfMcdBundle {
  std::vector<FlippingCurve> curves;  // methods × quantiles, in that order
  FlippingCurve random;
  std::vector<CurveSummary> summaries;  // parallel to curves
  std::vector<int> explained_labels;    // deterministic prediction per sample
};

// Fraction of points after the first where `curve` lies strictly below `baseline` (score).
double BelowFraction(const FlippingCurve& curve, const FlippingCurve& baseline);

// Samples must share one true class. Each sample is explained w.r.t. its
// deterministic prediction; rankings come from MCD quantile maps.
PfMcdBundle PfMcdExperiment(const Model& model, const FlipSamples& samples, const PfMcdConfig& cfg);

}  // namespace xaib
