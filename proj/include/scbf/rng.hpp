#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "scbf/common.hpp"

namespace scbf {

/// Seeded Gaussian noise stream.
///
/// Substreams are derived from the parent seed and a fixed index, so the
/// values drawn by one consumer are independent of the order in which other
/// consumers draw theirs. Gaussians are produced by an explicit Box-Muller
/// transform over the raw mt19937_64 output, which keeps trajectories
/// bit-identical across standard library implementations.
class NoiseStream {
 public:
  explicit NoiseStream(std::uint64_t seed) : seed_(seed), gen_(seed) {}

  /// Child stream at a fixed index; independent of this stream's position.
  NoiseStream substream(std::uint64_t index) const {
    return NoiseStream(mix(seed_, index));
  }

  std::uint64_t seed() const { return seed_; }

  /// Uniform draw in (0, 1), never exactly 0 or 1.
  double uniform() {
    return (static_cast<double>(gen_() >> 11) + 0.5) *
           (1.0 / 9007199254740992.0);  // 2^-53
  }

  /// Standard normal draw.
  double gaussian() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  /// n independent N(0, 1) draws.
  Vector gaussian_vector(int n) {
    Vector v(n);
    for (int i = 0; i < n; ++i) v[i] = gaussian();
    return v;
  }

  /// Wiener increment over dt: N(0, dt * I).
  Vector wiener_increment(int n, double dt) {
    return std::sqrt(dt) * gaussian_vector(n);
  }

  /// SplitMix64-style seed derivation.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace scbf
