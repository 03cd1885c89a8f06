#pragma once

#include <cstdint>
#include <vector>

namespace xaib {

// Counter-based generator: every draw is a pure function of (key, counter),
// so any sample of a stochastic computation can be regenerated in isolation
// without replaying the ones before it.
class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(std::uint64_t seed) : key_(Mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

  // Independent child stream; derive(a).derive(b) != derive(b).derive(a).
  RngStream derive(std::uint64_t tag) const;

  std::uint64_t key() const { return key_; }

  // Stateless access.
  std::uint64_t bits_at(std::uint64_t counter) const;
  double uniform_at(std::uint64_t counter) const;  // [0, 1)

  // Sequential access through an internal counter.
  std::uint64_t next_bits() { return bits_at(counter_++); }
  double next_uniform() { return uniform_at(counter_++); }
  double next_normal();
  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n);

  static std::uint64_t Mix(std::uint64_t x);

 private:
  std::uint64_t key_ = 0x243f6a8885a308d3ULL;
  std::uint64_t counter_ = 0;
};

// Uniformly random permutation of [0, n) via Fisher-Yates.
std::vector<std::int32_t> RandomPermutation(std::int32_t n, RngStream rng);

}  // namespace xaib
