#pragma once

// Counter-based seeding. Every random draw in the library is taken from a
// short-lived generator whose state is a pure function of
// (master seed, stream domain, index), so results never depend on the order in
// which cells or replicates are visited.

#include <cstdint>
#include <limits>

namespace rbar {

/// Stream domains keep the observation, noise and initial-value draws of one
/// replicate statistically independent.
enum class Stream : std::uint64_t {
  observation = 0x6f62735f74726565ULL,
  noise = 0x6e6f6973655f7665ULL,
  initial_value = 0x78315f6c61770000ULL,
  replicate = 0x7265706c69636174ULL,
  chain = 0x636861696e5f7374ULL,
  generic = 0x67656e6572696300ULL,
};

inline constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t derive_seed(std::uint64_t master, Stream domain,
                                           std::uint64_t index) noexcept {
  std::uint64_t h = splitmix64_mix(master + 0x9e3779b97f4a7c15ULL);
  h = splitmix64_mix(h ^ static_cast<std::uint64_t>(domain));
  h = splitmix64_mix(h ^ (index * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL));
  return h;
}

/// SplitMix64 stream. Satisfies UniformRandomBitGenerator so it plugs into the
/// standard <random> distributions.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  constexpr explicit CounterRng(std::uint64_t state) noexcept : state_(state) {}
  constexpr CounterRng(std::uint64_t master, Stream domain, std::uint64_t index) noexcept
      : state_(derive_seed(master, domain, index)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    return splitmix64_mix(state_);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  constexpr double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

}  // namespace rbar
