// SPDX-License-Identifier: Apache-2.0
//
// Seeded random source built on std::mt19937_64. The engine's output is
// pinned by the C++ standard; the distributions here are written out
// explicitly (rather than using std::*_distribution, whose draw sequences
// are implementation-defined) so that a seed means the same byte-exact
// stream on every platform and standard library.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "kd/errors.hpp"

namespace kd {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t raw() { return engine_(); }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi], inclusive, via rejection (no modulo bias).
  long uniform_int(long lo, long hi) {
    if (lo > hi) throw ConfigError("rng: empty integer range");
    const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
    if (range == 0) return lo + static_cast<long>(engine_());  // full 64-bit span
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return lo + static_cast<long>(x % range);
  }

  /// Standard normal via Box-Muller; consumes exactly two engine draws.
  double normal() {
    double u1;
    do {
      u1 = uniform();
    } while (u1 == 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// N(0, std^2) truncated to [-bound_sigmas*std, +bound_sigmas*std] by
  /// resampling (never by clamping, which would pile mass on the bounds).
  double trunc_normal(double stddev, double bound_sigmas = 2.0) {
    double x;
    do {
      x = normal();
    } while (std::abs(x) > bound_sigmas);
    return x * stddev;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace kd
