// SPDX-License-Identifier: Apache-2.0
//
// Deterministic random streams. The standard <random> distributions are
// implementation-defined, which would break the byte-identical-CSV
// reproducibility contract, so the few samplers we need (exponential,
// gamma, beta) are implemented here against a fixed-output generator.

#pragma once

#include <cmath>
#include <cstdint>

namespace wavesim {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// xoshiro256** seeded via splitmix64.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  uint64_t next_u64() {
    auto rotl = [](uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
    uint64_t result = rotl(s_[1] * 5, 7) * 9;
    uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 bits.
  double next_double() { return (next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1], safe for log().
  double next_double_open() { return 1.0 - next_double(); }

  uint64_t next_below(uint64_t bound) {
    // Modulo bias is irrelevant at our bounds (<< 2^64).
    return bound == 0 ? 0 : next_u64() % bound;
  }

  double exponential(double rate) { return -std::log(next_double_open()) / rate; }

  double normal() {
    // Box-Muller with a cached second variate.
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_double_open();
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Marsaglia-Tsang for shape >= 1, boost for shape < 1.
  double gamma(double shape) {
    if (shape < 1.0) {
      double u = next_double_open();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0) continue;
      v = v * v * v;
      double u = next_double_open();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double beta(double alpha, double beta) {
    double x = gamma(alpha);
    double y = gamma(beta);
    return x / (x + y);
  }

 private:
  uint64_t s_[4];
  double spare_ = 0;
  bool have_spare_ = false;
};

// Derives an independent stream from a master seed and a stream tag, so
// that adding consumers never perturbs existing streams.
inline Rng derived_rng(uint64_t master_seed, uint64_t stream) {
  uint64_t s = master_seed ^ (0x51a9de1ac3f1b75dULL * (stream + 1));
  (void)splitmix64(s);
  return Rng(s);
}

}  // namespace wavesim
