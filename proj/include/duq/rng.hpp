// SPDX-License-Identifier: Apache-2.0
//
// Seedable random source. Draws are derived from raw mt19937_64 output so
// that a given seed produces the same stream on every platform, which the
// end-to-end reproducibility contract depends on.

#pragma once

#include "duq/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <random>

namespace duq {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  Index below(Index n) {
    return static_cast<Index>((static_cast<unsigned __int128>(gen_()) *
                               static_cast<unsigned __int128>(n)) >> 64);
  }

  /// Standard normal via Box-Muller, one spare cached per pair.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  std::uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace duq
