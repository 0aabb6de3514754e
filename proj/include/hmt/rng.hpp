// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>

namespace hmt {

/// xoshiro256** (Blackman & Vigna), seeded through splitmix64.
///
/// Every distribution below is implemented here rather than taken from
/// <random>, whose distributions are not specified bit-for-bit across
/// standard libraries. Same seed, same stream, on every platform.
class Rng {
 public:
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, bound). Lemire's nearly-divisionless rejection.
  std::uint64_t below(std::uint64_t bound);
  /// Standard normal via Box-Muller (no cached second value, so the stream
  /// position is a pure function of call count).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  const State& state() const { return state_; }
  void set_state(const State& state) { state_ = state; }

 private:
  State state_{};
};

/// Derives an independent sub-seed: splitmix64(seed + offset).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t offset);

}  // namespace hmt
