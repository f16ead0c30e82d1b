#include "sumforge/rng.hpp"

#include <cmath>
#include <numbers>

namespace sumforge {
namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

CounterRng::CounterRng(std::uint64_t seed) noexcept : key_(mix64(seed + kGolden)), counter_(0) {}

std::uint64_t CounterRng::at(std::uint64_t key, std::uint64_t index) noexcept {
  return mix64(mix64(key ^ (index * kGolden)) + index);
}

std::uint64_t CounterRng::next_u64() noexcept { return at(key_, counter_++); }

double CounterRng::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double uniform_at(std::uint64_t key, std::uint64_t index) noexcept {
  return static_cast<double>(CounterRng::at(key, index) >> 11) * 0x1.0p-53;
}

double CounterRng::normal() noexcept {
  // Box-Muller; u1 in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double CounterRng::truncated_normal(double stddev) noexcept {
  for (;;) {
    const double z = normal();
    if (std::abs(z) <= 2.0) return z * stddev;
  }
}

std::uint64_t CounterRng::below(std::uint64_t bound) noexcept {
  // Rejection keeps the draw unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
  for (;;) {
    const std::uint64_t v = next_u64();
    if (v < limit) return v % bound;
  }
}

CounterRng CounterRng::split(std::uint64_t stream) const noexcept {
  return CounterRng(mix64(key_ ^ mix64(stream + kGolden)), 0);
}

CounterRng CounterRng::split(std::string_view name) const noexcept {
  // FNV-1a over the name selects the stream.
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return split(h);
}

}  // namespace sumforge
