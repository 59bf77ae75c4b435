// SPDX-License-Identifier: Apache-2.0
//
// Scenario assembly and execution: builds a complete simulated system
// (fabric, runtime, host kernel, agent, workload) from a scenario spec,
// runs it, and reports per-class latency plus counters. Sweep and
// saturation-search drivers sit on top.

#pragma once

#include <map>
#include <memory>
#include <string>

#include "wavesim/host_kernel.hpp"
#include "wavesim/memtier.hpp"
#include "wavesim/rpc.hpp"
#include "wavesim/sched_agents.hpp"
#include "wavesim/workload.hpp"

namespace wavesim {

// Workload kind tags used across scenarios.
constexpr uint32_t kKindGet = 0;
constexpr uint32_t kKindRange = 1;
constexpr uint32_t kKindBatch = 90;

enum class ScenarioKind : uint8_t { Sched, Rpc, Memtier };

struct OptimizationFlags {
  bool ipu_wb = true;
  bool host_wc_wt = true;
  bool prestage = true;

  int tier_index() const {
    if (prestage) return 3;
    if (host_wc_wt) return 2;
    if (ipu_wb) return 1;
    return 0;
  }
};

SwitchTier resolve_tier(const OptimizationFlags& f, bool onhost);

struct ScenarioSpec {
  std::string name = "scenario";
  ScenarioKind kind = ScenarioKind::Sched;
  std::string profile = "mount-evans";
  uint64_t seed = 1;

  // sched / rpc topology
  int workers = 16;
  bool agent_onhost = false;
  OptimizationFlags opts;
  PolicyKind policy = PolicyKind::Fifo;
  PolicyConfig policy_cfg;
  SwitchCostModel switch_costs;
  QueueConfig queue;
  uint64_t watchdog_ms = 20;
  int batch_threads = 0;  // Shinjuku+Shenango co-location

  // load
  LoadSpec load;
  // Threads injected at t=0 (keeps the runqueue deep for switch-path
  // microbenchmarks and drives the Shenango batch pool).
  int burst_threads = 0;
  uint64_t burst_service_ns = 10'000;

  // rpc deployment
  RpcScenarioKind rpc_scenario = RpcScenarioKind::OffloadAll;
  RpcConfig rpc;

  // memtier
  MemtierConfig memtier;

  // audits
  bool audit_run_span = false;
  // Optional event trace sink (timestamp, cpu, kind, tid).
  HostKernel::TraceFn trace;

  LoadSpec default_get_load(double rate) const;
};

// Canonical loads: 10us GETs, plus the dispersive 99.5/0.5 mix with 10ms
// RANGE queries.
LoadSpec get_only_load(double rate, uint64_t seed, uint64_t duration_ns,
                       uint64_t warmup_ns);
LoadSpec dispersive_load(double rate, uint64_t seed, uint64_t duration_ns,
                         uint64_t warmup_ns);

struct ClassStats {
  uint64_t completed = 0;
  uint64_t p50 = 0, p99 = 0, p999 = 0;
  double mean = 0;
};

struct RunResult {
  std::string scenario;
  std::string policy;
  std::string profile;
  double offered_rate = 0;
  double offered_in_window = 0;    // arrivals/s inside the measure window
  double completed_rate = 0;       // completions/s inside the window
  std::map<uint32_t, ClassStats> by_kind;  // latency-tracked classes
  double batch_share = 0;

  // counters
  uint64_t created = 0, departed = 0, switches = 0, preemptions = 0;
  uint64_t spurious_msix = 0, prestage_hits = 0, prestage_misses = 0;
  uint64_t agent_dispatches = 0, agent_prestages = 0, agent_wakes = 0;
  uint64_t agent_messages = 0;
  uint64_t queue_occupancy_end = 0;
  uint64_t span_violations = 0, max_run_span = 0;
  uint64_t switch_span_p50 = 0;  // voluntary block -> next thread running
  uint64_t illegal_txn_transitions = 0, stale_claims = 0;
  uint64_t watchdog_kills = 0, failed_txns = 0, dropped_irqs = 0;
  uint64_t msix_sent = 0, dma_transfers = 0;
  uint64_t events_dispatched = 0;

  // memtier series
  std::vector<uint64_t> faults_per_epoch;
  std::vector<uint64_t> cleared_per_iteration;
  double fast_fraction = 0;
  double loop_duration_ms_ref = 0;

  const ClassStats& kind(uint32_t k) const { return by_kind.at(k); }

  SweepPoint to_point(uint32_t latency_kind) const {
    SweepPoint p;
    // Completion tracking is judged against realized arrivals, not the
    // nominal generator rate.
    p.offered_rate = offered_in_window > 0 ? offered_in_window : offered_rate;
    p.completed_rate = completed_rate;
    auto it = by_kind.find(latency_kind);
    if (it != by_kind.end()) {
      p.p50_ns = it->second.p50;
      p.p99_ns = it->second.p99;
      p.p999_ns = it->second.p999;
    }
    p.batch_share = batch_share;
    return p;
  }
};

// Runs one scenario to completion. Deterministic: identical spec (incl.
// seed) yields an identical RunResult.
RunResult run_scenario(const ScenarioSpec& spec);

// Sweeps load rates (optionally across worker threads; each point is an
// independent simulation) and returns points ordered by rate.
std::vector<RunResult> run_sweep(const ScenarioSpec& base,
                                 const std::vector<double>& rates, int jobs);

struct SaturationResult {
  double rate = 0;
  std::vector<SweepPoint> curve;
  std::vector<RunResult> runs;
};

// Adaptive saturation search: geometric ramp to bracket the knee, then
// bisection to `resolution` (fraction of the bracket), evaluating the
// same pass criterion find_saturation() applies.
SaturationResult find_saturation_adaptive(const ScenarioSpec& base,
                                          uint32_t latency_kind,
                                          double start_rate, double max_rate,
                                          double threshold_multiplier = 10.0,
                                          double resolution = 0.005,
                                          int jobs = 1);

// CSV + manifest emission (schema shared by the CLI and tests).
std::string metrics_csv_header();
std::string metrics_csv_row(const RunResult& r);
std::string manifest_json(const std::string& canonical_config, uint64_t seed,
                          const std::string& out_csv);

}  // namespace wavesim
