// SPDX-License-Identifier: Apache-2.0
//
// Calibration probe: measured voluntary-switch medians per tier and FIFO
// saturation throughputs next to their target bands.

#include <cstdio>

#include "wavesim/experiment.hpp"

using namespace wavesim;

static ScenarioSpec base_spec(int tier, int workers, bool onhost) {
  ScenarioSpec s;
  s.kind = ScenarioKind::Sched;
  s.workers = workers;
  s.agent_onhost = onhost;
  s.policy = PolicyKind::Fifo;
  s.opts.ipu_wb = tier >= 1;
  s.opts.host_wc_wt = tier >= 2;
  s.opts.prestage = tier >= 3;
  if (onhost) s.profile = "onhost";
  s.name = "cal";
  return s;
}

int main(int argc, char** argv) {
  bool do_sat = argc > 1;
  const uint64_t mid[4] = {13420, 10050, 6505, 3680};
  for (int t = 0; t < 4; ++t) {
    ScenarioSpec s = base_spec(t, 1, false);
    s.burst_threads = 3000;
    s.load = get_only_load(0, 7, 120'000'000, 1'000'000);
    RunResult r = run_scenario(s);
    double dev = 100.0 * (double(r.switch_span_p50) / mid[t] - 1.0);
    std::printf(
        "tier %d: switch p50 %7lu  target %5lu (%+.1f%%)  completed %.0f/s "
        "prestage h/m %lu/%lu spur %lu\n",
        t, (unsigned long)r.switch_span_p50, (unsigned long)mid[t], dev,
        r.completed_rate, (unsigned long)r.prestage_hits,
        (unsigned long)r.prestage_misses, (unsigned long)r.spurious_msix);
  }
  {
    ScenarioSpec s = base_spec(3, 1, true);
    s.burst_threads = 3000;
    s.load = get_only_load(0, 7, 120'000'000, 1'000'000);
    RunResult r = run_scenario(s);
    std::printf("onhost prestage: switch p50 %lu target 2805\n",
                (unsigned long)r.switch_span_p50);
  }
  if (!do_sat) return 0;

  auto sat = [&](int tier, int workers, bool onhost, double res_frac) {
    ScenarioSpec s = base_spec(tier, workers, onhost);
    s.load = get_only_load(0, 11, 200'000'000, 50'000'000);
    std::fprintf(stderr, "probing tier=%d workers=%d onhost=%d\n", tier,
                 workers, int(onhost));
    auto res = find_saturation_adaptive(s, kKindGet, 40e3, 2.56e6, 10,
                                        res_frac);
    return res.rate;
  };
  double s0 = sat(0, 16, false, 0.01);
  std::printf("sat tier0 %.0f\n", s0);
  double s1 = sat(1, 16, false, 0.01);
  std::printf("sat tier1 %.0f  (+%.1f%% vs t0; target +102+-25)\n", s1,
              100 * (s1 / s0 - 1));
  double s2 = sat(2, 16, false, 0.01);
  std::printf("sat tier2 %.0f  (+%.1f%% vs t1; target +31+-25)\n", s2,
              100 * (s2 / s1 - 1));
  double s3 = sat(3, 16, false, 0.004);
  std::printf("sat tier3 %.0f  (+%.1f%% vs t2; target +32+-25)\n", s3,
              100 * (s3 / s2 - 1));
  double w15 = sat(3, 15, false, 0.004);
  double oh = sat(3, 15, true, 0.004);
  std::printf("wave15 %.0f onhost %.0f wave16 %.0f\n", w15, oh, s3);
  std::printf("wave16/wave15 = +%.2f%% (target 5.7+-3)\n",
              100 * (s3 / w15 - 1));
  std::printf("onhost/wave15 = +%.2f%% (target (0,3])\n",
              100 * (oh / w15 - 1));
  return 0;
}
