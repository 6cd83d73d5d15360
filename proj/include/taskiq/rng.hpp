#pragma once

#include <cstdint>
#include <limits>
#include <random>

namespace taskiq {

/// Counter-based splittable generator.
///
/// Output i of a stream is a SplitMix64 finalizer applied to (key + i * golden),
/// so a stream is fully described by its 64-bit key and position. `split()`
/// derives a child key from the parent key and a purpose id without touching
/// the parent's position, which lets dataset generation, bootstrap resampling
/// and per-image chains draw from independent streams in any order.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) : key_(mix(seed ^ 0x6a09e667f3bcc908ULL)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return next_u64(); }

  std::uint64_t next_u64() {
    ++counter_;
    return mix(key_ + counter_ * kGolden);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() { return normal_(*this); }
  double normal(double mean, double sd) { return mean + sd * normal(); }

  int poisson(double mean) {
    if (mean <= 0.0) return 0;
    std::poisson_distribution<int> dist(mean);
    return dist(*this);
  }

  std::size_t uniform_index(std::size_t n) {
    std::uniform_int_distribution<std::size_t> dist(0, n - 1);
    return dist(*this);
  }

  /// Independent child stream. Same (parent key, purpose) always yields the same child.
  Rng split(std::uint64_t purpose) const {
    Rng child;
    child.key_ = mix(key_ ^ mix(purpose * 0xd1342543de82ef95ULL + 0x9e3779b97f4a7c15ULL));
    return child;
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t position() const { return counter_; }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

// Stream purposes used across the library. Keeping them in one place avoids
// accidental reuse of the same child stream for two different jobs.
namespace stream {
inline constexpr std::uint64_t kDataset = 1;
inline constexpr std::uint64_t kNoise = 2;
inline constexpr std::uint64_t kTraining = 3;
inline constexpr std::uint64_t kValidation = 4;
inline constexpr std::uint64_t kTest = 5;
inline constexpr std::uint64_t kObserver = 6;
inline constexpr std::uint64_t kBootstrap = 7;
inline constexpr std::uint64_t kInit = 8;
inline constexpr std::uint64_t kSlo = 9;
inline constexpr std::uint64_t kGrowth = 10;
}  // namespace stream

}  // namespace taskiq
