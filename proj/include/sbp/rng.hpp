#pragma once

#include <cstdint>
#include <limits>

namespace sbp {

// Counter-based 64-bit generator. Output i (0-based) of a stream with seed s is
//
//   z = s + (i + 1) * 0x9E3779B97F4A7C15
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   out = z ^ (z >> 31)
//
// i.e. the SplitMix64 finalizer applied to a Weyl sequence, so any language
// with 64-bit wrapping arithmetic reproduces the same stream.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed = 0, std::uint64_t counter = 0) noexcept
      : seed_(seed), counter_(counter) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept { return mix(seed_ + (++counter_) * kGamma); }

  // Uniform on the open interval (0, 1); 53 random bits.
  double uniform() noexcept {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Uniform integer in [0, n) by rejection (n > 0).
  std::uint64_t below(std::uint64_t n) noexcept;

  // Box-Muller, cosine branch only: two uniforms per normal draw.
  double normal() noexcept;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

// Seed of the sub-stream `offset` derived from a user-facing seed:
// mix(seed + (offset + 1) * 0xD1B54A32D192ED03).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t offset) noexcept {
  return CounterRng::mix(seed + (offset + 1) * 0xD1B54A32D192ED03ULL);
}

// Fixed seed offsets used when one user-facing seed fans out to consumers.
namespace seed_offset {
inline constexpr std::uint64_t kSynth = 0;
inline constexpr std::uint64_t kModelInit = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kPointModelInit = 3;
inline constexpr std::uint64_t kPointShuffle = 4;
inline constexpr std::uint64_t kSampling = 5;
}  // namespace seed_offset

}  // namespace sbp
