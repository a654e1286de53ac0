#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace dfpg {

/**
 * Seeded random stream built on SplitMix64 (Steele, Lea & Flood 2014):
 * the state is a 64-bit counter advanced by the golden-ratio increment and
 * every output is a fixed bijective mix of the counter, so a given seed
 * produces the same sequence on every platform.
 *
 * Sub-streams are split off by name: derive("encoder") hashes the tag with
 * FNV-1a, xors it into the parent seed and mixes the result. Children do not
 * advance the parent.
 */
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) noexcept : seed_(seed), state_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept;

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;

  /// Standard normal via Box-Muller (second variate cached).
  double normal() noexcept;
  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  /// Gamma(shape, 1) by Marsaglia-Tsang.
  double gamma(double shape) noexcept;
  double beta(double a, double b) noexcept;

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n) noexcept;

  RngStream derive(std::string_view tag) const noexcept;
  RngStream derive(std::uint64_t index) const noexcept;
  RngStream derive(std::string_view tag, std::uint64_t index) const noexcept {
    return derive(tag).derive(index);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

std::uint64_t splitmix64_mix(std::uint64_t z) noexcept;

}  // namespace dfpg
