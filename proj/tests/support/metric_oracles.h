#pragma once

#include <cstdint>
#include <vector>

// Brute-force reference implementations of the localisation metrics:
// full sorts and pairwise comparisons, no shared code with the library.
namespace xaib::testing {

// Every pixel index ordered by value descending, ties to the lower index.
std::vector<std::size_t> FullRanking(const std::vector<float>& map);

double OraclePointingGame(const std::vector<float>& map, const std::vector<std::uint8_t>& mask);
double OracleAttributionLocalisation(const std::vector<float>& map, const std::vector<std::uint8_t>& mask);
double OracleTopK(const std::vector<float>& map, const std::vector<std::uint8_t>& mask, std::size_t k);
double OracleRelevanceRank(const std::vector<float>& map, const std::vector<std::uint8_t>& mask);
// (wins + 0.5 * ties) / (pos * neg) over every positive/negative pair.
double OraclePairwiseAuc(const std::vector<float>& map, const std::vector<std::uint8_t>& mask);

}  // namespace xaib::testing
