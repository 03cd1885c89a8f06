#include "xaib/rng.h"

#include <cmath>
#include <numbers>
#include <numeric>
#include <utility>

namespace xaib {

std::uint64_t RngStream::Mix(std::uint64_t x) {
  // SplitMix64 finalizer.
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RngStream RngStream::derive(std::uint64_t tag) const {
  RngStream child;
  child.key_ = Mix(key_ ^ Mix(tag + 0x3c6ef372fe94f82bULL));
  return child;
}

std::uint64_t RngStream::bits_at(std::uint64_t counter) const {
  return Mix(Mix(counter ^ key_) + key_);
}

double RngStream::uniform_at(std::uint64_t counter) const {
  return static_cast<double>(bits_at(counter) >> 11) * 0x1.0p-53;
}

double RngStream::next_normal() {
  const double u1 = 1.0 - next_uniform();  // (0, 1]
  const double u2 = next_uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::next_below(std::uint64_t n) {
  if (n <= 1) return 0;
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t r;
  do {
    r = next_bits();
  } while (r >= limit);
  return r % n;
}

std::vector<std::int32_t> RandomPermutation(std::int32_t n, RngStream rng) {
  std::vector<std::int32_t> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  for (std::int32_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::int32_t>(rng.next_below(static_cast<std::uint64_t>(i) + 1));
    std::swap(perm[i], perm[j]);
  }
  return perm;
}

}  // namespace xaib
