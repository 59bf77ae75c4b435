// SPDX-License-Identifier: Apache-2.0

#include "wavesim/experiment.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <thread>

#include "json.hpp"

namespace wavesim {

constexpr uint32_t kLatencyClientBit = 0x100;

SwitchTier resolve_tier(const OptimizationFlags& f, bool onhost) {
  SwitchTier t;
  t.index = f.tier_index();
  t.onhost = onhost;
  t.msg_pte = f.host_wc_wt ? PteType::WC : PteType::UC;
  t.txn_pte = f.host_wc_wt ? PteType::WT : PteType::UC;
  t.prefetch = f.prestage;
  t.prestage = f.prestage;
  t.agent_wb = f.ipu_wb;
  if (onhost) t.agent_wb = true;
  return t;
}

LoadSpec get_only_load(double rate, uint64_t seed, uint64_t duration_ns,
                       uint64_t warmup_ns) {
  LoadSpec l;
  l.rate_per_sec = rate;
  l.seed = seed;
  l.duration_ns = duration_ns;
  l.warmup_ns = warmup_ns;
  l.mix = {{kKindGet, 1.0, 10'000, 0}};
  return l;
}

LoadSpec dispersive_load(double rate, uint64_t seed, uint64_t duration_ns,
                         uint64_t warmup_ns) {
  LoadSpec l;
  l.rate_per_sec = rate;
  l.seed = seed;
  l.duration_ns = duration_ns;
  l.warmup_ns = warmup_ns;
  l.mix = {{kKindGet, 0.995, 10'000, 0}, {kKindRange, 0.005, 10'000'000, 1}};
  return l;
}

namespace {

struct ClassRec {
  LatencyRecorder rec;
  uint64_t completed = 0;
};

struct Recorders {
  std::map<uint32_t, ClassRec> by_kind;
  uint64_t completed_in_window = 0;

  void record(uint32_t kind, uint64_t latency_ns, bool in_window) {
    if (!in_window) return;
    auto& cr = by_kind[kind];
    cr.rec.record(latency_ns);
    ++cr.completed;
    ++completed_in_window;
  }
};

void fill_latency_stats(const Recorders& recs, RunResult& out) {
  for (const auto& [kind, cr] : recs.by_kind) {
    ClassStats cs;
    cs.completed = cr.completed;
    if (cr.rec.count()) {
      cs.p50 = cr.rec.percentile(50);
      cs.p99 = cr.rec.percentile(99);
      cs.p999 = cr.rec.percentile(99.9);
      cs.mean = cr.rec.mean();
    }
    out.by_kind[kind] = cs;
  }
}

struct SchedRig {
  std::unique_ptr<Simulator> sim;
  std::unique_ptr<PcieFabric> fabric;
  std::unique_ptr<WaveRuntime> runtime;
  std::unique_ptr<HostKernel> kernel;
  std::unique_ptr<SchedAgent> agent;
  std::unique_ptr<RpcSubsystem> rpc;
  int agent_host_cpu = -1;
};

// Builds the full system for sched/rpc scenarios.
SchedRig build_rig(const ScenarioSpec& spec) {
  SchedRig rig;
  bool is_rpc = spec.kind == ScenarioKind::Rpc;
  bool stack_on_host =
      is_rpc && spec.rpc_scenario == RpcScenarioKind::OnHostAll;
  int host_cpus = spec.workers;
  int loadgen_cpu = 0;
  if (!is_rpc) loadgen_cpu = host_cpus++;  // synthetic generator CPU
  int rx_base = host_cpus;
  if (stack_on_host) host_cpus += spec.rpc.rx_actors_onhost;
  (void)rx_base;
  if (spec.agent_onhost) rig.agent_host_cpu = host_cpus++;

  rig.sim = std::make_unique<Simulator>();
  rig.fabric = std::make_unique<PcieFabric>(
      *rig.sim, latency_profile(spec.profile), host_cpus);

  WaveConfig wc;
  EnclaveSpec e;
  e.id = 0;
  for (int i = 0; i < spec.workers; ++i) e.host_cpus.push_back(i);
  e.subsystem = is_rpc ? "rpc+sched" : "sched";
  e.watchdog_deadline_ms = spec.watchdog_ms;
  e.agent = spec.agent_onhost ? AgentLocation{false, rig.agent_host_cpu}
                              : AgentLocation{true, 0};
  e.queue = spec.queue;
  wc.enclaves.push_back(e);
  rig.runtime = std::make_unique<WaveRuntime>(*rig.fabric, wc);

  SwitchTier tier = resolve_tier(spec.opts, spec.agent_onhost);
  HostKernelConfig kc;
  kc.sched_enclave = 0;
  kc.tier = tier;
  kc.costs = spec.switch_costs;
  kc.loadgen_cpu = loadgen_cpu;
  if (spec.audit_run_span) {
    // Preemption bound: slice + agent loop granularity + notification
    // window + handler/dispatch work, with slack for queued vectors.
    const LatencyModel& m = rig.fabric->model();
    uint64_t notify = tier.onhost ? spec.switch_costs.onhost_ipi_window_ns
                                  : m.msix_e2e_ns;
    uint64_t handler = m.clflush_ns + m.mmio_read_ns + m.mmio_write_ns +
                       spec.switch_costs.stages(tier).dispatch_ns;
    kc.run_span_bound_ns = spec.policy_cfg.slice_ns +
                           2 * spec.policy_cfg.loop_tick_ns + notify +
                           2 * handler + 2000;
  }
  rig.kernel = std::make_unique<HostKernel>(*rig.runtime, kc);

  if (is_rpc)
    rig.rpc = std::make_unique<RpcSubsystem>(*rig.runtime, *rig.kernel, 0,
                                             spec.rpc_scenario, spec.rpc,
                                             spec.workers);

  PolicyConfig pc = spec.policy_cfg;
  pc.kind = spec.policy;
  rig.agent = std::make_unique<SchedAgent>(*rig.runtime, *rig.kernel, 0,
                                           e.agent, pc, tier);

  // Consumer endpoints: the agent's side of every queue.
  Enclave& encl = rig.runtime->enclave(0);
  for (size_t qi = 0; qi < encl.queue_count(); ++qi) {
    MessageQueue& q = encl.queue(qi);
    if (!spec.agent_onhost) {
      q.set_ipu_consumer({0, tier.agent_wb});
    } else if (qi == 0 || stack_on_host) {
      // Kernel events (and an on-host stack's steering rings) are
      // coherent host memory for an on-host agent.
      q.set_host_consumer({rig.agent_host_cpu, PteType::WB});
    } else {
      // Offloaded stack, on-host scheduler: steering entries cross the
      // bus and the scheduler reads them via cached MMIO.
      q.set_host_consumer({rig.agent_host_cpu, PteType::WT});
    }
  }
  encl.queue(0).set_overflow_handler([k = rig.kernel.get()] {
    k->kill_agent();
  });
  return rig;
}

RunResult finish_result(const ScenarioSpec& spec, SchedRig& rig,
                        const Recorders& recs, double offered_in_window,
                        uint64_t window_ns, uint64_t batch_base,
                        uint64_t span_base) {
  RunResult out;
  out.scenario = spec.name;
  out.policy = policy_name(spec.policy);
  out.profile = spec.profile;
  out.offered_rate = spec.load.rate_per_sec;
  out.offered_in_window = offered_in_window;
  out.completed_rate = double(recs.completed_in_window) * 1e9 /
                       double(window_ns ? window_ns : 1);
  fill_latency_stats(recs, out);

  HostKernel& k = *rig.kernel;
  k.accumulate_current_runs();
  uint64_t batch_ns = k.run_ns_batch() - batch_base;
  (void)span_base;
  if (spec.batch_threads > 0 && window_ns)
    out.batch_share =
        double(batch_ns) / double(window_ns * uint64_t(spec.workers));

  {
    auto spans = k.voluntary_switch_spans();
    if (!spans.empty()) {
      std::nth_element(spans.begin(), spans.begin() + spans.size() / 2,
                       spans.end());
      out.switch_span_p50 = spans[spans.size() / 2];
    }
  }
  out.created = k.created();
  out.departed = k.departed();
  out.switches = k.switches();
  out.preemptions = k.preemptions();
  out.spurious_msix = k.spurious_msix();
  out.prestage_hits = k.prestage_hits();
  out.prestage_misses = k.prestage_misses();
  out.span_violations = k.span_violations();
  out.max_run_span = k.max_run_span_ns();
  out.watchdog_kills = k.watchdog_kills();
  out.failed_txns = k.failed_txns();
  out.agent_dispatches = rig.agent->dispatches();
  out.agent_prestages = rig.agent->prestages();
  out.agent_wakes = rig.agent->wakes();
  out.agent_messages = rig.agent->messages_seen();
  out.queue_occupancy_end = rig.runtime->enclave(0).queue(0).occupancy();
  Enclave& e = rig.runtime->enclave(0);
  out.illegal_txn_transitions = e.txns().illegal_transitions();
  out.stale_claims = e.txns().stale_claims();
  out.dropped_irqs = rig.runtime->dropped_irqs();
  out.msix_sent = rig.fabric->msix_sent();
  out.dma_transfers = rig.fabric->dma_transfers();
  out.events_dispatched = rig.sim->dispatched();
  return out;
}

RunResult run_sched(const ScenarioSpec& spec) {
  SchedRig rig = build_rig(spec);
  if (spec.trace) rig.kernel->set_trace(spec.trace);
  Recorders recs;
  uint64_t warm = spec.load.warmup_ns;
  uint64_t dur = spec.load.duration_ns;

  rig.kernel->set_depart_hook(
      [&](const Thread& t, SimTime at) {
        if (t.req_id == 0) return;
        recs.record(t.kind, at - t.arrival, at.ns >= warm && at.ns < dur);
      });

  rig.agent->start();
  rig.kernel->start_watchdog();

  // Batch co-location threads exist from the start.
  for (int b = 0; b < spec.batch_threads; ++b) {
    HostKernel::SpawnSpec bs;
    bs.kind = kKindBatch;
    bs.batch = true;
    rig.kernel->spawn_thread(bs);
  }
  for (int b = 0; b < spec.burst_threads; ++b) {
    HostKernel::SpawnSpec bs;
    bs.kind = kKindGet;
    bs.service_ns = spec.burst_service_ns;
    rig.kernel->spawn_thread(bs);
  }

  auto arrivals = generate_arrivals(spec.load);
  uint64_t offered = 0;
  uint64_t next_req = 1;
  for (const auto& a : arrivals) {
    if (a.at.ns >= warm && a.at.ns < dur) ++offered;
    rig.sim->schedule(a.at, [&rig, a, rid = next_req++] {
      HostKernel::SpawnSpec ss;
      ss.kind = a.kind;
      ss.slo_class = a.slo_class;
      ss.service_ns = a.service_ns;
      ss.req_id = rid;
      rig.kernel->spawn_thread(ss);
    });
  }

  uint64_t batch_base = 0;
  rig.sim->schedule(SimTime{warm}, [&] {
    rig.kernel->accumulate_current_runs();
    batch_base = rig.kernel->run_ns_batch();
  });

  rig.sim->run_until(SimTime{dur});
  uint64_t window = dur - warm;
  double offered_rate = double(offered) * 1e9 / double(window);
  return finish_result(spec, rig, recs, offered_rate, window, batch_base, 0);
}

RunResult run_rpc(const ScenarioSpec& spec) {
  SchedRig rig = build_rig(spec);
  if (spec.trace) rig.kernel->set_trace(spec.trace);
  Recorders recs;
  uint64_t warm = spec.load.warmup_ns;
  uint64_t dur = spec.load.duration_ns;

  rig.rpc->set_completion_sink([&](const RpcSubsystem::Completion& c) {
    // Latency-client records live under their own class keys.
    uint32_t key = c.kind | (c.latency_client ? kLatencyClientBit : 0);
    bool in_window = rig.sim->now().ns >= warm && rig.sim->now().ns < dur;
    recs.record(key, c.latency_ns, in_window);
  });
  rig.kernel->set_depart_hook([&](const Thread& t, SimTime at) {
    rig.rpc->record_completion(t, at);
  });
  rig.kernel->set_payload_hook([&](int cpu, Thread& t) {
    return rig.rpc->payload_stall(cpu, t);
  });
  rig.kernel->set_complete_hook([&](int cpu, Thread& t) {
    return rig.rpc->response_cost(cpu, t);
  });

  rig.agent->start();
  rig.kernel->start_watchdog();

  // Two open-loop clients: the load client at the sweep rate and the
  // latency client at a small fixed fraction of it.
  LoadSpec lat = spec.load;
  lat.rate_per_sec = spec.load.rate_per_sec * spec.rpc.latency_client_fraction;
  lat.seed = spec.load.seed ^ 0x4c415459;
  uint64_t offered = 0;
  for (int client = 0; client < 2; ++client) {
    bool latency_client = client == 1;
    const LoadSpec& ls = latency_client ? lat : spec.load;
    for (const auto& a : generate_arrivals(ls)) {
      if (a.at.ns >= warm && a.at.ns < dur) ++offered;
      rig.sim->schedule(a.at, [&rig, a, latency_client] {
        rig.rpc->ingest(latency_client, a.kind, a.slo_class, a.service_ns);
      });
    }
  }

  rig.sim->run_until(SimTime{dur});
  uint64_t window = dur - warm;
  double offered_rate = double(offered) * 1e9 / double(window);
  return finish_result(spec, rig, recs, offered_rate, window, 0, 0);
}

RunResult run_memtier(const ScenarioSpec& spec) {
  RunResult out;
  out.scenario = spec.name;
  out.policy = "memtier";
  out.profile = spec.profile;

  Simulator sim;
  PcieFabric fabric(sim, latency_profile(spec.profile), 1);
  WaveConfig wc;
  EnclaveSpec e;
  e.id = 0;
  e.host_cpus = {0};
  e.subsystem = "memtier";
  wc.enclaves.push_back(e);
  WaveRuntime runtime(fabric, wc);
  MemtierSystem tier(runtime, 0, spec.memtier);
  tier.start();
  uint64_t total = uint64_t(spec.memtier.epochs) * spec.memtier.epoch_ns + 1;
  sim.run_until(SimTime{total});

  const MemtierStats& st = tier.stats();
  out.faults_per_epoch = st.faults_per_epoch;
  out.cleared_per_iteration = st.cleared_per_iteration;
  out.fast_fraction = tier.fast_fraction();
  out.loop_duration_ms_ref = st.modeled_loop_ms;
  out.events_dispatched = sim.dispatched();
  return out;
}

}  // namespace

RunResult run_scenario(const ScenarioSpec& spec) {
  switch (spec.kind) {
    case ScenarioKind::Sched:
      return run_sched(spec);
    case ScenarioKind::Rpc:
      return run_rpc(spec);
    case ScenarioKind::Memtier:
      return run_memtier(spec);
  }
  throw SimError("unknown scenario kind");
}

std::vector<RunResult> run_sweep(const ScenarioSpec& base,
                                 const std::vector<double>& rates, int jobs) {
  std::vector<RunResult> out(rates.size());
  if (jobs <= 1) {
    for (size_t i = 0; i < rates.size(); ++i) {
      ScenarioSpec s = base;
      s.load.rate_per_sec = rates[i];
      out[i] = run_scenario(s);
    }
    return out;
  }
  std::vector<std::thread> pool;
  std::atomic<size_t> next{0};
  for (int j = 0; j < jobs; ++j)
    pool.emplace_back([&] {
      for (;;) {
        size_t i = next.fetch_add(1);
        if (i >= rates.size()) return;
        ScenarioSpec s = base;
        s.load.rate_per_sec = rates[i];
        out[i] = run_scenario(s);
      }
    });
  for (auto& t : pool) t.join();
  return out;
}

SaturationResult find_saturation_adaptive(const ScenarioSpec& base,
                                          uint32_t latency_kind,
                                          double start_rate, double max_rate,
                                          double threshold_multiplier,
                                          double resolution, int jobs) {
  (void)jobs;
  SaturationResult res;
  auto eval = [&](double rate) -> SweepPoint {
    ScenarioSpec s = base;
    s.load.rate_per_sec = rate;
    RunResult r = run_scenario(s);
    res.runs.push_back(r);
    return r.to_point(latency_kind);
  };

  SweepPoint baseline = eval(start_rate);
  double limit = double(baseline.p99_ns) * threshold_multiplier;
  auto passes = [&](const SweepPoint& p) {
    return p.completed_rate >= 0.99 * p.offered_rate &&
           double(p.p99_ns) <= limit && p.p99_ns > 0;
  };
  res.curve.push_back(baseline);

  double lo = start_rate;
  SweepPoint lo_pt = baseline;
  double hi = 0;
  SweepPoint hi_pt;
  for (double rate = start_rate * 2; rate <= max_rate * 1.0001; rate *= 2) {
    SweepPoint p = eval(rate);
    res.curve.push_back(p);
    if (passes(p)) {
      lo = rate;
      lo_pt = p;
    } else {
      hi = rate;
      hi_pt = p;
      break;
    }
  }
  if (hi == 0) throw NeverSaturates();

  while ((hi - lo) / hi > resolution) {
    double mid = (hi + lo) / 2;
    SweepPoint p = eval(mid);
    res.curve.push_back(p);
    if (passes(p)) {
      lo = mid;
      lo_pt = p;
    } else {
      hi = mid;
      hi_pt = p;
    }
  }

  std::sort(res.curve.begin(), res.curve.end(),
            [](const SweepPoint& a, const SweepPoint& b) {
              return a.offered_rate < b.offered_rate;
            });
  std::vector<SweepPoint> bracket{lo_pt, hi_pt};
  // Reuse the curve-based rule for the official interpolated number.
  std::vector<SweepPoint> with_base{baseline, lo_pt, hi_pt};
  if (baseline.offered_rate == lo_pt.offered_rate)
    with_base = {baseline, hi_pt};
  res.rate = find_saturation(with_base, threshold_multiplier);
  return res;
}

std::string metrics_csv_header() {
  return "scenario,policy,profile,offered_rate,completed_rate,"
         "get_p50,get_p99,get_p999,range_p50,range_p99,range_p999,"
         "latget_p50,latget_p99,latget_p999,batch_share,"
         "created,departed,switches,preemptions,spurious_msix,"
         "prestage_hits,prestage_misses,agent_dispatches,agent_prestages,"
         "span_violations,max_run_span,watchdog_kills,failed_txns,"
         "msix_sent,dma_transfers,fast_fraction,loop_ms_ref,"
         "faults_last_epoch\n";
}

std::string metrics_csv_row(const RunResult& r) {
  auto kindstat = [&](uint32_t k) -> ClassStats {
    auto it = r.by_kind.find(k);
    return it == r.by_kind.end() ? ClassStats{} : it->second;
  };
  ClassStats g = kindstat(kKindGet);
  ClassStats rg = kindstat(kKindRange);
  ClassStats lg = kindstat(kKindGet | kLatencyClientBit);
  char buf[1024];
  std::snprintf(
      buf, sizeof buf,
      "%s,%s,%s,%.3f,%.3f,"
      "%" PRIu64 ",%" PRIu64 ",%" PRIu64 ",%" PRIu64 ",%" PRIu64 ",%" PRIu64
      ","
      "%" PRIu64 ",%" PRIu64 ",%" PRIu64 ",%.6f,"
      "%" PRIu64 ",%" PRIu64 ",%" PRIu64 ",%" PRIu64 ",%" PRIu64 ","
      "%" PRIu64 ",%" PRIu64 ",%" PRIu64 ",%" PRIu64 ","
      "%" PRIu64 ",%" PRIu64 ",%" PRIu64 ",%" PRIu64 ","
      "%" PRIu64 ",%" PRIu64 ",%.4f,%.3f,%" PRIu64 "\n",
      r.scenario.c_str(), r.policy.c_str(), r.profile.c_str(),
      r.offered_rate, r.completed_rate, g.p50, g.p99, g.p999, rg.p50, rg.p99,
      rg.p999, lg.p50, lg.p99, lg.p999, r.batch_share, r.created, r.departed,
      r.switches, r.preemptions, r.spurious_msix, r.prestage_hits,
      r.prestage_misses, r.agent_dispatches, r.agent_prestages,
      r.span_violations, r.max_run_span, r.watchdog_kills, r.failed_txns,
      r.msix_sent, r.dma_transfers, r.fast_fraction, r.loop_duration_ms_ref,
      r.faults_per_epoch.empty() ? 0 : r.faults_per_epoch.back());
  return buf;
}

static uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string manifest_json(const std::string& canonical_config, uint64_t seed,
                          const std::string& out_csv) {
  nlohmann::json j;
  j["tool"] = "wavesim";
  j["version"] = "0.1.0";
  j["seed"] = seed;
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016" PRIx64, fnv1a(canonical_config));
  j["config_hash"] = hash;
  j["config"] = canonical_config;
  j["metrics_csv"] = out_csv;
  return j.dump(2) + "\n";
}

}  // namespace wavesim
