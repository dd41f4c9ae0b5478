#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>

namespace sceneaware {

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// 53-bit mantissa mapping onto (0, 1); never returns 0 so log() is safe.
inline double to_unit_open(std::uint64_t bits) noexcept {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

/// Sequential generator for weight initialization and data synthesis. The
/// engine is std::mt19937_64; conversions to reals are done here so the
/// stream is identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform() { return to_unit_open(engine_()); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }

 private:
  std::mt19937_64 engine_;
};

/// Stateless stream: every draw is a pure function of (seed, counters), so
/// training noise is reproducible without being stored.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t bits(std::initializer_list<std::uint64_t> counters) const noexcept {
    std::uint64_t h = splitmix64(seed_);
    for (const auto c : counters) h = splitmix64(h ^ splitmix64(c + 0x632be59bd9b4e019ULL));
    return h;
  }

  double uniform(std::initializer_list<std::uint64_t> counters) const noexcept { return to_unit_open(bits(counters)); }

  /// Standard normal via Box-Muller over two decorrelated uniforms.
  double normal(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) const noexcept {
    const double u1 = to_unit_open(bits({a, b, c, d, 0}));
    const double u2 = to_unit_open(bits({a, b, c, d, 1}));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
};

}  // namespace sceneaware
