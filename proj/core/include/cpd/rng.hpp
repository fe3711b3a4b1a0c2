#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace cpd {

// Counter-based pseudo-random source. Every draw is a pure function of
// (seed, stream, counter), so randomized choices made inside parallel code
// are reproducible regardless of scheduling. Streams separate independent
// uses (pivot draws, re-selection coins, generators).
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t bits(std::uint64_t stream, std::uint64_t counter) const {
    std::uint64_t h = mix(seed_ + 0x9e3779b97f4a7c15ull * (stream + 1));
    return mix(h ^ mix(counter + 0x165667b19e3779f9ull));
  }

  // Uniform in [0, 1).
  double uniform(std::uint64_t stream, std::uint64_t counter) const {
    return static_cast<double>(bits(stream, counter) >> 11) * 0x1.0p-53;
  }

  // Uniform in [0, n). n must be > 0.
  std::uint64_t index(std::uint64_t stream, std::uint64_t counter, std::uint64_t n) const {
    using u128 = unsigned __int128;
    return static_cast<std::uint64_t>((u128(bits(stream, counter)) * u128(n)) >> 64);
  }

  bool coin(std::uint64_t stream, std::uint64_t counter, double p) const {
    return uniform(stream, counter) < p;
  }

  // Standard normal via Box-Muller; two derived counters feed one draw.
  double gaussian(std::uint64_t stream, std::uint64_t counter) const {
    double u1 = uniform(stream, 2 * counter);
    double u2 = uniform(stream, 2 * counter + 1);
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  static std::uint64_t mix(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
  }

  std::uint64_t seed_;
};

}  // namespace cpd
