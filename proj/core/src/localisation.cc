#include "xaib/localisation.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xaib/error.h"

namespace xaib {
namespace localisation {
namespace {

void CheckPair(std::span<const float> map, std::span<const std::uint8_t> mask) {
  if (map.size() != mask.size()) {
    throw Error("localisation: map has " + std::to_string(map.size()) + " pixels, mask has " +
                std::to_string(mask.size()));
  }
  if (map.empty()) throw Error("localisation: empty map");
}

std::size_t MaskSize(std::span<const std::uint8_t> mask) {
  return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](std::uint8_t v) { return v != 0; }));
}

void RequireNonEmptyMask(std::span<const std::uint8_t> mask) {
  if (MaskSize(mask) == 0) throw Error("localisation: empty mask");
}

}  // namespace

std::vector<std::size_t> TopIndices(std::span<const float> map, std::size_t k) {
  std::vector<std::size_t> idx(map.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto by_rank = [&](std::size_t a, std::size_t b) {
    return map[a] > map[b] || (map[a] == map[b] && a < b);
  };
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), by_rank);
  idx.resize(k);
  return idx;
}

double PointingGame(std::span<const float> map, std::span<const std::uint8_t> mask) {
  CheckPair(map, mask);
  RequireNonEmptyMask(mask);
  // max_element returns the first maximum, i.e. the lowest linear index.
  const auto top = static_cast<std::size_t>(std::max_element(map.begin(), map.end()) - map.begin());
  return mask[top] != 0 ? 1.0 : 0.0;
}

double AttributionLocalisation(std::span<const float> map, std::span<const std::uint8_t> mask) {
  CheckPair(map, mask);
  RequireNonEmptyMask(mask);
  double inside = 0.0, total = 0.0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    const double v = std::max(0.0, static_cast<double>(map[i]));
    total += v;
    if (mask[i]) inside += v;
  }
  if (!(total > 0.0)) throw Error("localisation: degenerate map (no positive attribution mass)");
  return inside / total;
}

double TopKIntersection(std::span<const float> map, std::span<const std::uint8_t> mask, std::size_t k) {
  CheckPair(map, mask);
  if (k < 1 || k > map.size()) {
    throw Error("localisation: k=" + std::to_string(k) + " outside [1, " + std::to_string(map.size()) + "]");
  }
  std::size_t hits = 0;
  for (auto i : TopIndices(map, k)) hits += mask[i] != 0;
  return static_cast<double>(hits) / static_cast<double>(k);
}

double RelevanceRankAccuracy(std::span<const float> map, std::span<const std::uint8_t> mask) {
  CheckPair(map, mask);
  const auto size = MaskSize(mask);
  if (size == 0) throw Error("localisation: empty mask");
  return TopKIntersection(map, mask, size);
}

double Auc(std::span<const float> map, std::span<const std::uint8_t> mask) {
  CheckPair(map, mask);
  const auto pos = MaskSize(mask);
  const auto neg = mask.size() - pos;
  if (pos == 0 || neg == 0) throw Error("localisation: AUC needs a mask that is neither empty nor full");
  std::vector<std::size_t> order(map.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return map[a] < map[b]; });
  // Ranks are 1-based; a tie group [i, j) shares the rank (i + 1 + j) / 2.
  // Doubled ranks keep everything integral until the final division.
  std::uint64_t rank_sum_x2 = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i + 1;
    while (j < order.size() && map[order[j]] == map[order[i]]) ++j;
    const std::uint64_t shared_x2 = i + 1 + j;
    for (std::size_t t = i; t < j; ++t) {
      if (mask[order[t]]) rank_sum_x2 += shared_x2;
    }
    i = j;
  }
  const std::uint64_t base_x2 = static_cast<std::uint64_t>(pos) * (pos + 1);
  const double u = static_cast<double>(rank_sum_x2 - base_x2) / 2.0;
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

}  // namespace localisation

const char* MetricId(LocalisationMetric m) {
  switch (m) {
    case LocalisationMetric::kPointingGame: return "pointing_game";
    case LocalisationMetric::kAttributionLocalisation: return "attribution_localisation";
    case LocalisationMetric::kTopKIntersection: return "top_k_intersection";
    case LocalisationMetric::kRelevanceRankAccuracy: return "relevance_rank_accuracy";
    case LocalisationMetric::kAuc: return "auc";
  }
  return "?";
}

const char* MetricTitle(LocalisationMetric m) {
  switch (m) {
    case LocalisationMetric::kPointingGame: return "Pointing Game";
    case LocalisationMetric::kAttributionLocalisation: return "Attribution Localisation";
    case LocalisationMetric::kTopKIntersection: return "Top-K Intersection";
    case LocalisationMetric::kRelevanceRankAccuracy: return "Relevance Rank Accuracy";
    case LocalisationMetric::kAuc: return "AUC";
  }
  return "?";
}

BinaryMask SelectMask(const SegMask& mask, const LocalisationConfig& config) {
  if (config.parts.empty()) return mask.union_mask();
  BinaryMask out{mask.height, mask.width, std::vector<std::uint8_t>(mask.parts.size(), 0)};
  for (std::size_t i = 0; i < mask.parts.size(); ++i) {
    out.inside[i] = std::find(config.parts.begin(), config.parts.end(), mask.parts[i]) != config.parts.end();
  }
  return out;
}

namespace {

double Score(LocalisationMetric metric, std::span<const float> map, std::span<const std::uint8_t> mask,
             const LocalisationConfig& config) {
  using namespace localisation;
  switch (metric) {
    case LocalisationMetric::kPointingGame: return PointingGame(map, mask);
    case LocalisationMetric::kAttributionLocalisation: return AttributionLocalisation(map, mask);
    case LocalisationMetric::kTopKIntersection:
      return TopKIntersection(map, mask, std::min(config.top_k, map.size()));
    case LocalisationMetric::kRelevanceRankAccuracy: return RelevanceRankAccuracy(map, mask);
    case LocalisationMetric::kAuc: return Auc(map, mask);
  }
  throw Error("unknown metric");
}

}  // namespace

std::vector<LocalisationResult> EvaluateLocalisation(std::span<const SaliencyMap> maps,
                                                     std::span<const BinaryMask> masks,
                                                     const LocalisationConfig& config) {
  if (maps.size() != masks.size()) {
    throw Error("localisation: " + std::to_string(maps.size()) + " maps but " + std::to_string(masks.size()) +
                " masks");
  }
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i].height != masks[i].height || maps[i].width != masks[i].width) {
      throw Error("localisation: sample " + std::to_string(i) + " map and mask differ in size");
    }
  }
  std::vector<LocalisationResult> results;
  for (auto metric : kAllLocalisationMetrics) {
    LocalisationResult r;
    r.metric = metric;
    r.config = config;
    // Neumaier-compensated sum keeps the mean independent of sample order
    // to well below reporting precision.
    double sum = 0.0, comp = 0.0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
      try {
        const double s = Score(metric, maps[i].values, masks[i].inside, config);
        r.scores.emplace_back(s);
        r.skip_reasons.emplace_back();
        const double t = sum + s;
        comp += std::abs(sum) >= std::abs(s) ? (sum - t) + s : (s - t) + sum;
        sum = t;
        ++r.count;
      } catch (const Error& e) {
        r.scores.emplace_back(std::nullopt);
        r.skip_reasons.emplace_back(e.what());
        ++r.skipped;
      }
    }
    if (r.count == 0) {
      throw Error(std::string("localisation: every sample was skipped for ") + MetricId(metric));
    }
    r.mean = (sum + comp) / static_cast<double>(r.count);
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace xaib
