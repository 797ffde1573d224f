// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace clab {

// Deterministic RNG. std::mt19937_64 output is pinned by the standard and the
// mappings below avoid libstdc++ distribution internals, so streams are
// bit-identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // N(0, 1) via Box-Muller; two uniforms per draw, no cached spare.
  double gaussian() {
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  // [0, n), Lemire reduction.
  std::int64_t below(std::int64_t n) {
    return static_cast<std::int64_t>(
        (static_cast<unsigned __int128>(gen_()) *
         static_cast<unsigned __int128>(n)) >>
        64);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace clab
