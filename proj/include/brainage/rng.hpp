#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace brainage {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// FNV-1a over a byte string; used to turn purpose tags into stream keys.
constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Derives an independent stream seed from a parent seed and a key.
/// Every random stream in the pipeline is reached by chaining derive_seed
/// from the single root seed.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t key) noexcept {
  return mix64(parent ^ mix64(key + 0x9E3779B97F4A7C15ULL));
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag) noexcept {
  return derive_seed(parent, fnv1a64(tag));
}

/// SplitMix64 generator (Steele, Lea, Flood). Gaussians use the Box-Muller
/// cosine branch and consume exactly two uniforms per draw, so streams stay
/// aligned across implementations.
class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  constexpr std::uint64_t next() noexcept {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix64(state_);
  }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform in (0, 1].
  double uniform_open_low() noexcept {
    return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  double gaussian(double mean = 0.0, double stddev = 1.0) noexcept;

  /// Unbiased-enough index in [0, bound) via 128-bit multiply-high.
  std::uint64_t below(std::uint64_t bound) noexcept {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next()) * bound) >> 64);
  }

  template <typename T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

}  // namespace brainage
