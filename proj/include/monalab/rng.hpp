#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace monalab {

// Platform-stable random source. std::mt19937_64 output is fully specified,
// but the standard distributions are not, so every transform lives here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; one draw per call keeps the stream position simple.
  double normal(double mean = 0.0, double stddev = 1.0);

  // Uniform integer in [0, bound) by rejection.
  std::uint64_t below(std::uint64_t bound);

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// SplitMix64 finalizer; derives independent stream seeds from a root seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace monalab
