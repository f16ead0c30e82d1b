#pragma once

#include <cstdint>
#include <string_view>

namespace sumforge {

/// Counter-based generator: every draw is a pure function of (key, counter),
/// so streams can be split by name or index without shared state.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed = 0) noexcept;

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() noexcept;
  double normal() noexcept;
  /// Normal(0, stddev) rejected outside +-2 stddev.
  double truncated_normal(double stddev) noexcept;
  /// Uniform integer in [0, bound); bound > 0.
  std::uint64_t below(std::uint64_t bound) noexcept;

  CounterRng split(std::uint64_t stream) const noexcept;
  CounterRng split(std::string_view name) const noexcept;

  std::uint64_t key() const noexcept { return key_; }

  /// Value of draw `index` under `key`, without touching any generator.
  static std::uint64_t at(std::uint64_t key, std::uint64_t index) noexcept;

 private:
  CounterRng(std::uint64_t key, std::uint64_t counter) noexcept : key_(key), counter_(counter) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Uniform [0, 1) from a keyed draw.
double uniform_at(std::uint64_t key, std::uint64_t index) noexcept;

}  // namespace sumforge
