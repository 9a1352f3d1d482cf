#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace mrla {

// Counter-based seedable generator (splitmix64). The state is a plain 64-bit
// counter advanced by a fixed increment, so the draw sequence for a given seed
// is identical on every platform: all mixing is exact integer arithmetic.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53 mantissa bits, bit-exact from the integer stream.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  template <class S>
  S uniform(S lo, S hi) {
    return static_cast<S>(lo + (hi - lo) * static_cast<S>(next_double()));
  }

  // Box-Muller; consumes exactly two uniform draws per call.
  template <class S>
  S normal(S mean = S(0), S stddev = S(1)) {
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * std::numbers::pi * u2;
    return static_cast<S>(mean + stddev * static_cast<S>(r * std::cos(theta)));
  }

  // Uniform integer in [0, n), rejection-free modulo (n is tiny in this library).
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

}  // namespace mrla
