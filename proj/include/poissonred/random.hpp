#ifndef POISSONRED_RANDOM_HPP
#define POISSONRED_RANDOM_HPP

#include <cstdint>

namespace poissonred {

/// SplitMix64 (Steele, Lea, Flood 2014).  Fixed algorithm so seeded clouds
/// are reproducible across platforms and standard-library versions.
class SplitMix64 {
 public:
  static constexpr const char* algorithm = "splitmix64";

  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

 private:
  std::uint64_t state_;
};

}  // namespace poissonred

#endif  // POISSONRED_RANDOM_HPP
