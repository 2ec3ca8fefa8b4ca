#pragma once

#include <cstdint>
#include <string_view>

#include "maven/tensor.hpp"

namespace maven {

/// SplitMix64 generator with a single 64-bit state. Streams are derived by
/// name, so adding a new consumer never shifts the draws of existing ones.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept : state_(seed) {}

  /// Independent child stream keyed by `name`. Does not advance this stream.
  Rng split(std::string_view name) const noexcept;

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (no cached spare, so draws are order-free).
  double normal() noexcept;
  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;

  std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

/// 64-bit FNV-1a, used to key named streams.
std::uint64_t fnv1a64(std::string_view text) noexcept;

Tensor normal_tensor(Dims dims, double stddev, Rng& rng);

}  // namespace maven
