#pragma once
// Counter-based random numbers: every draw is a pure function of
// (seed, stream, index, position), so lazily evaluated quantities and
// parallel workers see the same values regardless of evaluation order.

#include <cmath>
#include <cstdint>
#include <limits>

namespace qtube {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum class Stream : std::uint64_t {
  cell = 1,
  cell_jitter = 2,
  mu0 = 3,
  a3_sample = 4,
  a5_sample = 5,
  flux = 6,
};

/// SplitMix64 sequence started from a hashed key. Satisfies
/// std::uniform_random_bit_generator.
class KeyedRng {
 public:
  using result_type = std::uint64_t;

  KeyedRng(std::uint64_t seed, Stream stream, std::int64_t index)
      : state_(mix64(mix64(mix64(seed) ^ static_cast<std::uint64_t>(stream)) ^
                     static_cast<std::uint64_t>(index))) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

}  // namespace qtube
