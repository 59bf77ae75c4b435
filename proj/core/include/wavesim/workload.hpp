// SPDX-License-Identifier: Apache-2.0
//
// Open-loop Poisson load generation, log-bucket latency recording,
// percentile estimation, and saturation detection over sweep curves.

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wavesim/rng.hpp"
#include "wavesim/sim.hpp"

namespace wavesim {

struct MixEntry {
  uint32_t kind = 0;
  double probability = 1.0;
  uint64_t service_ns = 10'000;
  uint32_t slo_class = 0;
};

struct LoadSpec {
  double rate_per_sec = 0;
  std::vector<MixEntry> mix;
  uint64_t seed = 1;
  uint64_t duration_ns = 500'000'000;
  uint64_t warmup_ns = 100'000'000;

  void validate() const {
    double p = 0;
    for (const auto& m : mix) p += m.probability;
    if (std::abs(p - 1.0) > 1e-9)
      throw SimError("load mix probabilities must sum to 1");
    if (warmup_ns >= duration_ns && rate_per_sec > 0)
      throw SimError("warmup must be shorter than duration");
  }
};

struct Arrival {
  SimTime at;
  uint32_t kind;
  uint64_t service_ns;
  uint32_t slo_class;
};

// Exponential inter-arrivals from a derived deterministic stream; the
// kind is drawn per arrival from the mix.
std::vector<Arrival> generate_arrivals(const LoadSpec& spec);

class NoSamples : public SimError {
 public:
  explicit NoSamples(const std::string& cls)
      : SimError("no latency samples for class " + cls) {}
};

// Log-bucket histogram: geometric buckets with ratio 1.02, so any
// reported quantile is within ~1% of the true order statistic.
class LatencyRecorder {
 public:
  LatencyRecorder();
  void record(uint64_t latency_ns);
  uint64_t count() const { return count_; }
  uint64_t percentile(double q) const;  // q in (0, 100]
  uint64_t min() const { return min_; }
  uint64_t max() const { return max_; }
  double mean() const { return count_ ? double(sum_) / double(count_) : 0; }

 private:
  size_t bucket_for(uint64_t v) const;
  std::vector<uint64_t> buckets_;
  std::vector<uint64_t> bounds_;
  uint64_t count_ = 0;
  uint64_t sum_ = 0;
  uint64_t min_ = UINT64_MAX;
  uint64_t max_ = 0;
};

// One point of a latency-throughput sweep.
struct SweepPoint {
  double offered_rate = 0;      // req/s
  double completed_rate = 0;    // req/s over the measure window
  uint64_t p99_ns = 0;          // tracked latency class
  uint64_t p50_ns = 0;
  uint64_t p999_ns = 0;
  double batch_share = 0;
};

class NeverSaturates : public SimError {
 public:
  NeverSaturates() : SimError("criterion holds at the maximum sweep rate") {}
};

// Largest offered rate at which completions track offers (>= 99%) and p99
// stays within threshold_multiplier x the unloaded p99; linearly
// interpolated between the last passing and first failing sweep points.
double find_saturation(const std::vector<SweepPoint>& curve,
                       double threshold_multiplier = 10.0);

// Least-squares slope of batch share against offered rate; the Shenango
// co-location check asserts it is negative.
double batch_share_slope(const std::vector<SweepPoint>& curve);

}  // namespace wavesim
