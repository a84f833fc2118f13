#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace knnlens {

// Seeded generator with explicit derivation of independent streams. Only the
// engine's raw output is used; distributions are implemented here so results
// do not depend on the standard library vendor.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  /// Child generator whose stream is a pure function of (seed, stream, tag).
  Rng split(std::uint64_t tag) const;

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform integer in [0, bound); bound must be positive.
  std::uint64_t uniform_index(std::uint64_t bound);

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01();

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal();

  /// `count` distinct indices drawn uniformly from [0, population), returned
  /// in ascending order.
  std::vector<std::size_t> sample_without_replacement(std::size_t population, std::size_t count);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

}  // namespace knnlens
