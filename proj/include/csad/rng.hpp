#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace csad {

/// PCG32 (XSH-RR 64/32). Distinct `stream` values select independent
/// sequences for the same seed.
class Pcg32 {
 public:
  Pcg32(std::uint64_t seed, std::uint64_t stream = 0) : inc_((stream << 1u) | 1u) {
    next_u32();
    state_ += seed;
    next_u32();
  }

  std::uint32_t next_u32() {
    const std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    const auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    const auto rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() {
    const std::uint64_t hi = next_u32() >> 5;  // 27 bits
    const std::uint64_t lo = next_u32() >> 6;  // 26 bits
    return static_cast<double>((hi << 26) | lo) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, bound) without modulo bias.
  std::uint32_t below(std::uint32_t bound) {
    const std::uint32_t threshold = (-bound) % bound;
    for (;;) {
      const std::uint32_t r = next_u32();
      if (r >= threshold) return r % bound;
    }
  }

  bool chance(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (one value per call, no caching).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t state_ = 0;
  std::uint64_t inc_;
};

/// FNV-1a 64-bit; used to turn names into PRNG stream ids and for content checksums.
constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                std::uint64_t hash = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

/// Stream ids reserved per consumer so generation and augmentation never share a sequence.
namespace rng_stream {
inline constexpr std::uint64_t kGenerate = 0x67656e;      // "gen"
inline constexpr std::uint64_t kAugment = 0x617567;       // "aug"
inline constexpr std::uint64_t kDatasetSeeds = 0x647374;  // "dst"
inline constexpr std::uint64_t kShuffle = 0x736866;       // "shf"
inline constexpr std::uint64_t kTestData = 0x747374;      // "tst"
}  // namespace rng_stream

}  // namespace csad
