#pragma once

// Counter-based random stream for the Langevin experiments. Each draw is a
// pure function of (seed, counter), so trajectories are bitwise reproducible
// and parallel shards can partition seeds deterministically.

#include <cmath>
#include <cstdint>
#include <numbers>

#include "geomint/core.hpp"

namespace geomint {

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  /// Uniform draw in (0, 1].
  double next_uniform() {
    const std::uint64_t bits = value_at(seed_, counter_++);
    return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
  }

  /// Standard normal draw (Box-Muller, two uniforms per draw).
  double next_gaussian() {
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  static std::uint64_t value_at(std::uint64_t seed, std::uint64_t counter) {
    // SplitMix64 sequence element addressed by counter.
    std::uint64_t z = seed + (counter + 1) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

/// n independent Gaussians with the given mean and componentwise standard
/// deviation. A zero stddev component returns its mean exactly.
inline Vec gaussian_vector(RngStream& stream, int n, const Vec& mean, const Vec& stddev) {
  if (mean.size() != n || stddev.size() != n)
    throw ConfigError("gaussian_vector: dimension mismatch");
  if ((stddev.array() < 0.0).any()) throw ConfigError("gaussian_vector: negative stddev");
  Vec out(n);
  for (int i = 0; i < n; ++i) {
    const double g = stream.next_gaussian();
    out[i] = stddev[i] == 0.0 ? mean[i] : mean[i] + stddev[i] * g;
  }
  return out;
}

}  // namespace geomint
