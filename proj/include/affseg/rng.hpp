#pragma once

#include <cmath>
#include <cstdint>

#include "affseg/common.hpp"

namespace affseg {

/// Deterministic PRNG with a fixed algorithm (splitmix64 core), so that seeded
/// runs produce byte-identical streams regardless of standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : state_(seed ^ (0x9e3779b97f4a7c15ull * (stream + 1))) {
    next_u64();
  }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

  /// Standard normal via Box-Muller (explicit formula, library-independent).
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Normal truncated to two standard deviations (resampled), common init scheme.
  double truncated_normal(double stddev) {
    double z = normal();
    while (std::abs(z) > 2.0) z = normal();
    return z * stddev;
  }

  /// Derive an independent stream keyed by a label, without consuming state.
  Rng fork(std::uint64_t label) const { return Rng(state_, 0x94d049bb133111ebull ^ label); }

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

/// Stateless hash-based normal sample; used for reproducible per-pixel noise
/// where the evaluation order must not matter.
inline double hashed_normal(std::uint64_t key) {
  Rng r(key, 0x632be59bd9b4e019ull);
  return r.normal();
}

}  // namespace affseg
