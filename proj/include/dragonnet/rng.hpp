#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <utility>

namespace dragonnet {

/// SplitMix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Derives the seed of child stream `index` from `base`.
///
/// Children of one base are decorrelated, and the mapping depends only on
/// (base, index), so work items seeded this way can run in any order.
constexpr std::uint64_t split_seed(std::uint64_t base, std::uint64_t index) noexcept {
  return splitmix64(base ^ splitmix64(index + 1));
}

/// Deterministic random source.
///
/// Bits come from std::mt19937_64, whose output sequence is fixed by the C++
/// standard. Every derived quantity (uniforms, normals, shuffles) is computed
/// here rather than through <random> distributions, whose algorithms are
/// implementation-defined.
///
///  - uniform():  top 53 bits scaled into [0, 1)
///  - normal():   Box-Muller on two uniforms, both outputs used
///  - below(n):   rejection sampling, no modulo bias
///  - shuffle():  Fisher-Yates from the back
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x = 0;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  template <class T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  /// Independent child generator; does not advance this one.
  Rng fork(std::uint64_t stream) const { return Rng(split_seed(seed_, stream)); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace dragonnet
