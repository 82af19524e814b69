#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>

namespace qdz::rng {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

/// SplitMix64 finalizer. Bijective, full-avalanche mix of a 64-bit word.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Hashes (seed, w0, w1, ...) into one 64-bit value. Used to derive
/// independent, order-free streams from structured coordinates such as
/// (seed, layer, element, step).
template <class... Words>
constexpr std::uint64_t hash_words(std::uint64_t seed, Words... words) {
  std::uint64_t h = mix64(seed + kGolden);
  ((h = mix64(h ^ (static_cast<std::uint64_t>(words) + kGolden))), ...);
  return h;
}

/// Top 53 bits as a double in [0, 1).
constexpr double to_unit(std::uint64_t h) {
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Stream ids. Every consumer of randomness hashes its own id into the seed so
// that subsystems never share a sequence.
inline constexpr std::uint64_t kStreamInit = 1;
inline constexpr std::uint64_t kStreamShuffle = 2;
inline constexpr std::uint64_t kStreamQuant = 3;
inline constexpr std::uint64_t kStreamData = 4;
inline constexpr std::uint64_t kStreamNoise = 5;
inline constexpr std::uint64_t kStreamSplit = 6;

/// Counter-based sequential generator (SplitMix64). The initial state is a
/// hash of (seed, stream coordinates), so streams with different coordinates
/// are independent and replay-identical.
class Stream {
 public:
  template <class... Words>
  explicit Stream(std::uint64_t seed, Words... words)
      : state_(hash_words(seed, words...)) {}

  std::uint64_t next_u64() {
    state_ += kGolden;
    return mix64(state_);
  }

  /// Uniform in [0, 1).
  double u01() { return to_unit(next_u64()); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  /// Standard normal via Box-Muller; always consumes exactly two draws.
  double gauss() {
    const double u1 = u01();
    const double u2 = u01();
    const double r = std::sqrt(-2.0 * std::log1p(-u1));
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Uniform integer in [0, n). Modulo reduction; the bias at 64 bits is
  /// immaterial for shuffling and sampling.
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  template <class T>
  void shuffle(std::span<T> values) {
    if (values.size() < 2) return;
    for (std::size_t i = values.size() - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i + 1));
      std::swap(values[i], values[j]);
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace qdz::rng
