#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "projsdpa/numerics/tensor.hpp"

namespace projsdpa {

/// Counter-based generator: draw n is splitmix64(seed, n). Streams depend only
/// on the seed and the number of draws, never on platform or library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() { return mix(seed_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Lemire-style rejection keeps the draw unbiased.
    const std::uint64_t limit = -n % n;
    std::uint64_t x = next_u64();
    while (x < limit) x = next_u64();
    return x % n;
  }

  /// Standard normal via Box-Muller; one draw per pair of uniforms.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Derives an independent generator, e.g. one per parameter tensor.
  Rng fork() { return Rng(next_u64()); }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

inline Tensor rng_normal(Rng& rng, Shape shape, double mean = 0.0,
                         double stddev = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = mean + stddev * rng.normal();
  return t;
}

inline Tensor rng_uniform(Rng& rng, Shape shape, double lo = 0.0,
                          double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

template <typename Container>
void shuffle(Container& c, Rng& rng) {
  for (std::size_t i = c.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(c[i - 1], c[j]);
  }
}

}  // namespace projsdpa
