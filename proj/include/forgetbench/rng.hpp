#ifndef FORGETBENCH_RNG_HPP
#define FORGETBENCH_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>

namespace fb {

// Counter-based generator: the i-th output of a stream is splitmix64(seed + i*gamma).
// Gaussian variates use the polar-free Box-Muller transform on 53-bit uniforms.
// Both algorithms are fixed here, so a seed reproduces the same stream on every
// build; std::normal_distribution is implementation-defined and is not used.

inline constexpr std::uint64_t kGoldenGamma = 0x9e3779b97f4a7c15ULL;

constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Mixes a master seed with stream coordinates, e.g. (sample id, repetition).
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a) noexcept {
  return splitmix64(splitmix64(master + kGoldenGamma) ^ (a * 0xd1342543de82ef95ULL + 1));
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a,
                                    std::uint64_t b) noexcept {
  return derive_seed(derive_seed(master, a), b);
}

class CounterRng {
 public:
  explicit constexpr CounterRng(std::uint64_t seed) noexcept : seed_(seed) {}

  constexpr std::uint64_t next_u64() noexcept {
    ++counter_;
    return splitmix64(seed_ + counter_ * kGoldenGamma);
  }

  /// Uniform on [0, 1).
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    // Lemire's multiply-shift; bias is < n / 2^64 and irrelevant at our sizes.
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Pair of independent standard normals.
  std::pair<double, double> normal_pair() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double phi = 2.0 * std::numbers::pi * u2;
    return {r * std::cos(phi), r * std::sin(phi)};
  }

  /// +1 or -1 with equal probability.
  double rademacher() noexcept { return (next_u64() >> 63) ? 1.0 : -1.0; }

  constexpr std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace fb

#endif  // FORGETBENCH_RNG_HPP
