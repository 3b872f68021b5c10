#pragma once

#include <cstdint>
#include <string_view>

namespace bdrl {

// Deterministic stream generator used everywhere randomness is needed.
//
// The generator is splitmix64. It is pinned here (rather than <random>)
// because the standard library leaves distribution algorithms
// implementation-defined, and run artifacts must be byte-identical across
// toolchains. Every draw below is fully specified:
//
//   next_u64:    one splitmix64 step
//   next_below:  next_u64() % n
//   next_double: top 53 bits of next_u64() scaled to [0,1)
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform integer in [0, n). n must be positive.
  uint64_t next_below(uint64_t n) { return next_u64() % n; }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

 private:
  uint64_t state_;
};

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

// Seed-splitting rule: every module stream is derived from the global seed
// and a fixed label, so the same global seed always maps to the same
// per-module seeds.
inline uint64_t derive_seed(uint64_t seed, std::string_view label) {
  return Rng(seed ^ fnv1a64(label)).next_u64();
}

}  // namespace bdrl
