#pragma once

#include <cstdint>

namespace nsr {

/// PCG-XSH-RR 32-bit generator (64-bit state, selectable stream).
class Pcg32 {
 public:
  Pcg32() : Pcg32(0x853c49e6748fea9bULL, 0xda3e39cb94b95bdbULL) {}
  Pcg32(std::uint64_t seed, std::uint64_t stream) { reseed(seed, stream); }

  void reseed(std::uint64_t seed, std::uint64_t stream) {
    state_ = 0;
    inc_ = (stream << 1u) | 1u;
    next();
    state_ += seed;
    next();
  }

  std::uint32_t next() {
    const std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    const auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    const auto rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  std::uint64_t next64() {
    const std::uint64_t hi = next();
    return (hi << 32u) | next();
  }

  /// Unbiased integer in [0, bound).
  std::uint32_t below(std::uint32_t bound) {
    const std::uint32_t threshold = (0u - bound) % bound;
    for (;;) {
      const std::uint32_t r = next();
      if (r >= threshold) return r % bound;
    }
  }

  /// Uniform double in the open interval (0, 1).
  double uniform_open() { return (static_cast<double>(next()) + 0.5) * 0x1p-32; }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next64() >> 11u) * 0x1p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // UniformRandomBitGenerator interface.
  using result_type = std::uint32_t;
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return 0xffffffffu; }
  result_type operator()() { return next(); }

 private:
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 1;
};

/// One generator stream per consumer, all derived from a master seed, so the
/// draws of one consumer never shift when another consumer changes.
enum class Stream : std::uint64_t {
  init = 1,
  patch = 2,
  augment = 3,
  noise = 4,
  gumbel = 5,
  eval_noise = 6,
  test = 7,
};

inline Pcg32 make_stream(std::uint64_t master_seed, Stream purpose) {
  return Pcg32(master_seed, static_cast<std::uint64_t>(purpose));
}

}  // namespace nsr
