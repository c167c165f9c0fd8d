/// @file rng.hpp
/// @brief Reproducible random streams: every path owns a generator seeded by a
///        hash of (master seed, path index), so serial and multi-worker runs
///        produce bit-identical draws regardless of scheduling.
#pragma once

#include <array>
#include <cstdint>

namespace revuzlab {

/// SplitMix64 step; also used to hash seed material into stream states.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// xoshiro256++ with ziggurat normal sampling.
class Rng {
 public:
  Rng() : Rng(0xA02B9FE5ULL) {}
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
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

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in (0, 1] (safe as a log argument).
  double uniform_pos() { return double((next_u64() >> 11) + 1) * 0x1.0p-53; }

  /// Standard normal via a 256-layer ziggurat; exact tail beyond the cut.
  double normal();

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::array<std::uint64_t, 4> s_{};
};

/// Stream for path `index` under `master`: an avalanche hash of both words.
/// Golden-ratio spacing keeps nearby indices in distant SplitMix64 states.
inline Rng path_rng(std::uint64_t master, std::uint64_t index) {
  std::uint64_t sm = master;
  const std::uint64_t a = splitmix64(sm);
  sm = a ^ (index * 0x9E3779B97F4A7C15ULL + 0x1D8E4E27C47D124FULL);
  return Rng(splitmix64(sm));
}

/// Auxiliary stream keyed by arbitrary tag words (e.g. per-step refinement
/// streams that must not disturb the main path stream).
inline Rng tagged_rng(std::uint64_t master, std::uint64_t tag0,
                      std::uint64_t tag1 = 0, std::uint64_t tag2 = 0) {
  std::uint64_t sm = master;
  sm = splitmix64(sm) ^ (tag0 * 0xD6E8FEB86659FD93ULL);
  sm = splitmix64(sm) ^ (tag1 * 0xCA5A826395121157ULL);
  sm = splitmix64(sm) ^ (tag2 * 0x9E6C63D0876A9A75ULL);
  return Rng(splitmix64(sm));
}

}  // namespace revuzlab
