// SPDX-License-Identifier: Apache-2.0

#include "wavesim/workload.hpp"

#include <algorithm>

namespace wavesim {

std::vector<Arrival> generate_arrivals(const LoadSpec& spec) {
  spec.validate();
  std::vector<Arrival> out;
  if (spec.rate_per_sec <= 0) return out;
  Rng rng = derived_rng(spec.seed, /*stream=*/0x4c6f6164);
  double t_ns = 0;
  const double scale = 1e9 / spec.rate_per_sec;
  while (true) {
    t_ns += rng.exponential(1.0) * scale;
    if (t_ns >= double(spec.duration_ns)) break;
    double u = rng.next_double();
    const MixEntry* chosen = &spec.mix.back();
    double acc = 0;
    for (const auto& m : spec.mix) {
      acc += m.probability;
      if (u < acc) {
        chosen = &m;
        break;
      }
    }
    out.push_back(Arrival{SimTime{uint64_t(t_ns)}, chosen->kind,
                          chosen->service_ns, chosen->slo_class});
  }
  return out;
}

LatencyRecorder::LatencyRecorder() {
  // Geometric bounds 1ns .. ~200s with ratio 1.02.
  double b = 1.0;
  while (b < 2e11) {
    bounds_.push_back(uint64_t(b));
    b *= 1.02;
    if (uint64_t(b) == bounds_.back()) b = double(bounds_.back() + 1);
  }
  buckets_.assign(bounds_.size() + 1, 0);
}

size_t LatencyRecorder::bucket_for(uint64_t v) const {
  return std::upper_bound(bounds_.begin(), bounds_.end(), v) -
         bounds_.begin();
}

void LatencyRecorder::record(uint64_t latency_ns) {
  ++buckets_[bucket_for(latency_ns)];
  ++count_;
  sum_ += latency_ns;
  min_ = std::min(min_, latency_ns);
  max_ = std::max(max_, latency_ns);
}

uint64_t LatencyRecorder::percentile(double q) const {
  if (count_ == 0) throw NoSamples("(empty)");
  uint64_t target = uint64_t(std::ceil(q / 100.0 * double(count_)));
  target = std::max<uint64_t>(1, std::min(target, count_));
  uint64_t seen = 0;
  for (size_t i = 0; i < buckets_.size(); ++i) {
    seen += buckets_[i];
    if (seen >= target) {
      uint64_t lo = i == 0 ? 0 : bounds_[i - 1];
      uint64_t hi = i < bounds_.size() ? bounds_[i] : max_;
      uint64_t mid = lo + (hi - lo) / 2;
      return std::max(std::min(mid, max_), min_);
    }
  }
  return max_;
}

double find_saturation(const std::vector<SweepPoint>& curve,
                       double threshold_multiplier) {
  if (curve.size() < 2) throw SimError("saturation needs >= 2 sweep points");
  double baseline = double(curve.front().p99_ns);
  double limit = baseline * threshold_multiplier;
  auto passes = [&](const SweepPoint& p) {
    return p.completed_rate >= 0.99 * p.offered_rate &&
           double(p.p99_ns) <= limit;
  };
  size_t last_pass = SIZE_MAX;
  for (size_t i = 0; i < curve.size(); ++i) {
    if (passes(curve[i]))
      last_pass = i;
    else
      break;
  }
  if (last_pass == SIZE_MAX) return curve.front().offered_rate;
  if (last_pass == curve.size() - 1) throw NeverSaturates();
  const SweepPoint& a = curve[last_pass];
  const SweepPoint& b = curve[last_pass + 1];

  // Interpolate the earliest criterion breach between the two points.
  double rate = b.offered_rate;
  if (double(b.p99_ns) > limit && double(b.p99_ns) > double(a.p99_ns)) {
    double f = (limit - double(a.p99_ns)) /
               (double(b.p99_ns) - double(a.p99_ns));
    f = std::clamp(f, 0.0, 1.0);
    rate = std::min(rate, a.offered_rate +
                              f * (b.offered_rate - a.offered_rate));
  }
  if (b.completed_rate < 0.99 * b.offered_rate) {
    double ga = a.completed_rate - 0.99 * a.offered_rate;
    double gb = b.completed_rate - 0.99 * b.offered_rate;
    if (ga > 0 && gb < ga) {
      double f = std::clamp(ga / (ga - gb), 0.0, 1.0);
      rate = std::min(rate, a.offered_rate +
                                f * (b.offered_rate - a.offered_rate));
    }
  }
  return rate;
}

double batch_share_slope(const std::vector<SweepPoint>& curve) {
  if (curve.size() < 2) return 0;
  double n = double(curve.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& p : curve) {
    sx += p.offered_rate;
    sy += p.batch_share;
    sxx += p.offered_rate * p.offered_rate;
    sxy += p.offered_rate * p.batch_share;
  }
  double denom = n * sxx - sx * sx;
  return denom == 0 ? 0 : (n * sxy - sx * sy) / denom;
}

}  // namespace wavesim
