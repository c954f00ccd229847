// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Portable pseudo-random streams. The distributions are implemented here
// rather than taken from <random> so that a seed produces the same draws on
// every standard library.

#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace agglo {

std::uint64_t splitmix64(std::uint64_t& state);

/// Derives an independent 64-bit seed from a parent seed and a stream name.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view stream);

/// Derives a seed for a numbered event (a training step, a sample index).
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index);

/// xoshiro256** generator. Value type: copying forks the stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();

  /// Uniform integer in [lo, hi], unbiased.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  /// Uniform double in [0, 1) with 53 bits of resolution.
  double uniform();

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; consumes exactly two uniforms.
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  const std::array<std::uint64_t, 4>& state() const { return state_; }

  bool operator==(const Rng&) const = default;

 private:
  std::array<std::uint64_t, 4> state_{};
};

}  // namespace agglo
