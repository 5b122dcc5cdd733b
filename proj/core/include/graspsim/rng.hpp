#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string_view>

namespace grasp {

// Deterministic PRNG (xoshiro256++) with named substreams so every module
// can be re-seeded independently from one global seed. All experiment
// randomness must flow through this type; never seed from the wall clock.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) { seed_state(seed); }

  // Substream derivation: hash(seed, name, index). Streams with different
  // names or indices are statistically independent.
  Rng(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0) {
    std::uint64_t h = seed;
    for (char c : stream) h = mix(h ^ static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
    seed_state(mix(h ^ mix(index)));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    // Lemire's multiply-shift rejection method, unbiased.
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    auto lo = static_cast<std::uint64_t>(m);
    if (lo < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (lo < threshold) {
        x = next_u64();
        m = static_cast<__uint128_t>(x) * n;
        lo = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  int uniform_int(int lo, int hi_inclusive) {
    return lo + static_cast<int>(uniform_index(static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
  }

  // Standard normal via Box-Muller (no cached spare, so the draw sequence
  // is position-independent).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  // splitmix64 finalizer, used both for hashing and state expansion.
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  void seed_state(std::uint64_t seed) {
    std::uint64_t z = seed;
    for (auto& s : s_) {
      z = mix(z);
      s = z;
    }
    // xoshiro must not start in the all-zero state.
    if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 0x9e3779b97f4a7c15ULL;
  }

  std::array<std::uint64_t, 4> s_{};
};

}  // namespace grasp
