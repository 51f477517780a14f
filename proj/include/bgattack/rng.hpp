#pragma once

#include <cstdint>
#include <limits>

namespace bgattack {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Stream identifiers keep independent consumers of one seed apart.
enum class StreamTag : std::uint64_t {
  PhysicalAdaptation = 1,
  SceneLayout = 2,
  PerturbationInit = 3,
  DetectorWeights = 4,
  EpochShuffle = 5,
  Test = 99,
};

/// Counter-based generator: output n is a pure function of (key, n), so any
/// draw can be reproduced without replaying the ones before it.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, StreamTag tag, std::uint64_t index = 0) noexcept
      : key_(splitmix64(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(tag))) ^
                        splitmix64(index + 0x632BE59BD9B4E019ULL))) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept { return at(counter_++); }
  result_type at(std::uint64_t n) const noexcept {
    return splitmix64(key_ + n * 0xD1B54A32D192ED03ULL);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace bgattack
