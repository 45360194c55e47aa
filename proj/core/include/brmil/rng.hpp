#pragma once

#include <cstdint>

namespace brmil {

/// Counter-based deterministic random stream. Every draw is a pure function
/// of (seed, counter), so identical seeds give identical streams on every
/// platform. split() derives an independent stream for a subcomponent.
class RngState {
 public:
  explicit RngState(std::uint64_t seed) : seed_(seed) {}

  RngState split(std::uint64_t tag) const {
    return RngState(mix(seed_ ^ mix(tag ^ 0x9e3779b97f4a7c15ull)));
  }

  std::uint64_t next_u64() { return mix(seed_ + 0x9e3779b97f4a7c15ull * ++counter_); }

  /// Uniform in [0, 1), 53 mantissa bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; two fresh uniforms per call.
  double normal();

  /// Uniform integer in [0, n). Requires n > 0.
  std::uint64_t uniform_int(std::uint64_t n);

  std::uint64_t seed() const { return seed_; }

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
  std::uint64_t counter_ = 0;
};

}  // namespace brmil
