#pragma once

#include <cstdint>
#include <random>

namespace defocus {

// Deterministic random source. mt19937_64 supplies the raw stream, but all
// derived draws are implemented here so sequences never depend on the standard
// library's distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 bits.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Widening multiply keeps bias below 2^-64.
  std::int64_t next_below(std::int64_t n) {
    const auto r = static_cast<unsigned __int128>(next_u64());
    return static_cast<std::int64_t>((r * static_cast<unsigned __int128>(n)) >> 64);
  }

  // Uniform integer in [lo, hi] inclusive.
  std::int64_t next_range(std::int64_t lo, std::int64_t hi) {
    return lo + next_below(hi - lo + 1);
  }

  double next_real(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  // Independent child stream; does not consume parent state, so the set of
  // children drawn from one seed is stable regardless of call order.
  Rng child(std::uint64_t tag) const { return Rng(mix(seed_, tag)); }

  std::uint64_t seed() const { return seed_; }

 private:
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    // splitmix64 finalizer over the combined words.
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace defocus
