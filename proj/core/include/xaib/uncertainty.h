#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xaib/attribution.h"
#include "xaib/model.h"

namespace xaib {

struct MCDConfig {
  int samples = 500;                   // T
  std::optional<float> rate_override;  // replaces the model's dropout rate
  std::uint64_t base_seed = 0;         // sample t uses RngStream(base_seed + t)

  void validate() const;
  RngStream stream(int t) const { return RngStream(base_seed + static_cast<std::uint64_t>(t)); }
  std::vector<RngStream> streams() const;
};

inline constexpr int kDistributionSamples = 500;  // MCD predictive-distribution reports
inline constexpr int kFlippingSamples = 100;      // MCD quantile maps for pixel flipping

struct ClassSummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (T-1 denominator; 0 when T = 1)
  double q25 = 0.0;
  double median = 0.0;
  double q75 = 0.0;
};

struct PredictiveDistribution {
  std::vector<std::vector<double>> probabilities;  // T rows × classes, softmax-normalized
  std::vector<ClassSummary> summary;               // per class

  int samples() const { return static_cast<int>(probabilities.size()); }
  std::vector<double> column(int cls) const;
};

// T stochastic forward passes with dropout active. Throws Error when the
// model has no dropout layer.
PredictiveDistribution McdPredict(const Model& model, const Tensor& image, const MCDConfig& cfg);

// Row t alone, reproducing McdPredict(...).probabilities[t] bit-exactly.
std::vector<double> McdPredictSample(const Model& model, const Tensor& image, const MCDConfig& cfg, int t);

// One saliency map per dropout sample; sample t's forward and backward
// passes share the dropout mask drawn from cfg.stream(t).
std::vector<SaliencyMap> McdSaliencyStack(const Model& model, const Tensor& image, int label, Method method,
                                          const MCDConfig& cfg, Aggregation aggregation,
                                          const IGConfig& ig = {});

enum class QuantileRule { kLinear, kNearestRank };

struct QuantileSaliencyMap {
  double q = 0.5;
  int samples = 0;
  Method method = Method::kGradient;
  SaliencyMap map;  // per-pixel quantile values
};

// Per-pixel order statistic over the stack. kLinear interpolates between
// adjacent ranks at position q*(T-1); kNearestRank takes rank ceil(q*T).
QuantileSaliencyMap QuantileMap(std::span<const SaliencyMap> stack, double q,
                                QuantileRule rule = QuantileRule::kLinear);

// Linear-interpolated quantile of an unsorted sample (double precision).
double Quantile(std::vector<double> values, double q);

}  // namespace xaib
