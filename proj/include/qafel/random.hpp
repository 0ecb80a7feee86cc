#pragma once

// Portable random streams.
//
// std::mt19937_64 and std::seed_seq are fully specified by the standard, but
// the std:: distributions are not, so every transform used by the simulator
// is defined here. Given the same seed, draws are identical on every
// conforming platform.
//
// Stream splitting: a run has one master seed. Each consumer (delays,
// minibatches, quantizers, ...) asks for a stream by (tag, a, b), e.g.
// (kMinibatch, client, run_index). The stream is an mt19937_64 seeded through
// seed_seq{master_lo, master_hi, tag, a_lo, a_hi, b_lo, b_hi}. Streams never
// share state, so changing how many draws one consumer makes cannot shift
// another consumer's sequence.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>

namespace qafel {

enum class StreamTag : std::uint32_t {
  kDataSynthesis = 1,
  kPartition = 2,
  kDelay = 3,
  kMinibatch = 4,
  kClientQuantizer = 5,
  kServerQuantizer = 6,
  kAssignment = 7,
  kProbe = 8,
  kCertification = 9,
  kInit = 10,
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed, 0, 0, 0); }

  Rng(std::uint64_t master, StreamTag tag, std::uint64_t a = 0,
      std::uint64_t b = 0) {
    reseed(master, static_cast<std::uint32_t>(tag), a, b);
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform on (0, 1].
  double uniform_open0() { return 1.0 - uniform(); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), unbiased by rejection.
  std::uint64_t index(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit =
        std::numeric_limits<std::uint64_t>::max() -
        std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return r % n;
  }

  // Standard normal via the Marsaglia polar method.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  // Gamma(shape, 1), Marsaglia-Tsang with the shape < 1 boost.
  double gamma(double shape) {
    if (shape < 1.0) {
      const double g = gamma(shape + 1.0);
      return g * std::pow(uniform_open0(), 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double z, v;
      do {
        z = normal();
        v = 1.0 + c * z;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform_open0();
      if (u < 1.0 - 0.0331 * z * z * z * z) return d * v;
      if (std::log(u) < 0.5 * z * z + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

 private:
  void reseed(std::uint64_t master, std::uint32_t tag, std::uint64_t a,
              std::uint64_t b) {
    std::seed_seq seq{static_cast<std::uint32_t>(master),
                      static_cast<std::uint32_t>(master >> 32),
                      tag,
                      static_cast<std::uint32_t>(a),
                      static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b),
                      static_cast<std::uint32_t>(b >> 32)};
    engine_.seed(seq);
    has_spare_ = false;
  }

  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace qafel
