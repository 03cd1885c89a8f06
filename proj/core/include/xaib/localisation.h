#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xaib/attribution.h"
#include "xaib/dataset.h"

namespace xaib {

// The five localisation scores of a saliency map against a binary
// ground-truth mask. Pixel rankings sort by value descending with ties going
// to the lower linear (row-major) index. Maps and masks are flat row-major
// buffers of equal length.
namespace localisation {

// 1 if the top-ranked pixel is inside the mask, else 0.
double PointingGame(std::span<const float> map, std::span<const std::uint8_t> mask);

// Positive attribution mass inside the mask over total positive mass.
double AttributionLocalisation(std::span<const float> map, std::span<const std::uint8_t> mask);

// |top-k pixels ∩ mask| / k.
double TopKIntersection(std::span<const float> map, std::span<const std::uint8_t> mask, std::size_t k);

// TopKIntersection with k = |mask|.
double RelevanceRankAccuracy(std::span<const float> map, std::span<const std::uint8_t> mask);

// ROC-AUC of map values as scores for mask membership; tied scores get
// average ranks (Mann-Whitney U / (pos * neg)).
double Auc(std::span<const float> map, std::span<const std::uint8_t> mask);

// Indices of the k highest-ranked pixels, in rank order.
std::vector<std::size_t> TopIndices(std::span<const float> map, std::size_t k);

}  // namespace localisation

enum class LocalisationMetric {
  kPointingGame,
  kAttributionLocalisation,
  kTopKIntersection,
  kRelevanceRankAccuracy,
  kAuc,
};

inline constexpr LocalisationMetric kAllLocalisationMetrics[] = {
    LocalisationMetric::kPointingGame, LocalisationMetric::kAttributionLocalisation,
    LocalisationMetric::kTopKIntersection, LocalisationMetric::kRelevanceRankAccuracy, LocalisationMetric::kAuc};

const char* MetricId(LocalisationMetric m);     // e.g. "pointing_game"
const char* MetricTitle(LocalisationMetric m);  // e.g. "Pointing Game"

inline constexpr std::size_t kDefaultTopK = 1000;

struct LocalisationConfig {
  std::size_t top_k = kDefaultTopK;  // clipped to the pixel count per sample
  Aggregation aggregation = Aggregation::kPositive;
  // Which mask parts count as ground truth; empty = union of all parts.
  std::vector<Part> parts;
};

struct LocalisationResult {
  LocalisationMetric metric = LocalisationMetric::kPointingGame;
  std::vector<std::optional<double>> scores;  // per sample; nullopt = skipped
  std::vector<std::string> skip_reasons;      // parallel to scores ("" when scored)
  double mean = 0.0;
  std::size_t count = 0;    // scored samples
  std::size_t skipped = 0;  // samples whose metric raised an error
  LocalisationConfig config;
};

BinaryMask SelectMask(const SegMask& mask, const LocalisationConfig& config);

// Scores every (map, mask) pair; degenerate pairs are skipped and tallied.
// Throws Error when maps and masks are misaligned or a metric skipped every
// sample.
std::vector<LocalisationResult> EvaluateLocalisation(std::span<const SaliencyMap> maps,
                                                     std::span<const BinaryMask> masks,
                                                     const LocalisationConfig& config = {});

}  // namespace xaib
