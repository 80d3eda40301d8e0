#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace mosaic {

// Deterministic random source. std::mt19937_64 is fully specified by the
// standard, but the std distributions are not, so every draw we expose is
// implemented here explicitly. Two runs with the same seed produce the same
// stream on any platform/compiler.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random mantissa bits.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Box-Muller; the spare value is cached so draws come in a fixed order.
  double gaussian(double mean = 0.0, double stddev = 1.0);

  // Unbiased integer in [0, n) via rejection sampling.
  uint64_t bounded(uint64_t n);

  // Fisher-Yates with our own bounded(); std::shuffle is not reproducible
  // across standard library implementations.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (size_t i = v.size() - 1; i > 0; --i) {
      size_t j = static_cast<size_t>(bounded(i + 1));
      std::swap(v[i], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// splitmix64 finalizer; used to derive stream seeds from (seed, epoch, step)
// style tuples without correlated low bits.
uint64_t mix_seed(uint64_t a, uint64_t b);
uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c);

}  // namespace mosaic
