// SPDX-License-Identifier: Apache-2.0

#include "wavesim/rpc.hpp"

namespace wavesim {

RpcScenarioKind rpc_scenario_from_name(const std::string& name) {
  if (name == "onhost_all") return RpcScenarioKind::OnHostAll;
  if (name == "onhost_sched") return RpcScenarioKind::OnHostScheduler;
  if (name == "offload_all") return RpcScenarioKind::OffloadAll;
  throw SimError("unknown rpc scenario: " + name);
}

const char* rpc_scenario_name(RpcScenarioKind k) {
  switch (k) {
    case RpcScenarioKind::OnHostAll: return "onhost_all";
    case RpcScenarioKind::OnHostScheduler: return "onhost_sched";
    case RpcScenarioKind::OffloadAll: return "offload_all";
  }
  return "?";
}

RpcSubsystem::RpcSubsystem(WaveRuntime& runtime, HostKernel& kernel,
                           int enclave_id, RpcScenarioKind scenario,
                           RpcConfig cfg, int workers)
    : runtime_(runtime),
      kernel_(kernel),
      sim_(runtime.fabric().sim()),
      enclave_id_(enclave_id),
      scenario_(scenario),
      cfg_(cfg) {
  Enclave& e = runtime_.enclave(enclave_id_);
  bool stack_on_host = scenario_ == RpcScenarioKind::OnHostAll;
  int n_rx = stack_on_host ? cfg_.rx_actors_onhost : cfg_.rx_actors_ipu;
  rx_count_ = size_t(n_rx);
  QueueConfig steer = e.spec().queue;
  for (int i = 0; i < n_rx; ++i) {
    Rx rx;
    rx.on_ipu = !stack_on_host;
    // On-host stack: RX CPUs sit after the workers; offloaded stack: IPU
    // CPUs after the agent's CPU 0.
    rx.cpu = stack_on_host ? workers + i : 1 + i;
    rx.queue_idx = e.create_queue(steer, "rx" + std::to_string(i));
    rx_.push_back(rx);
  }
  if (payload_loc() == PayloadLoc::SocDram)
    payload_region_ =
        runtime_.fabric().soc().alloc("rpc.payloads", 1 << 20, enclave_id_);
}

PayloadLoc RpcSubsystem::payload_loc() const {
  // Payloads live where the RPC stack runs.
  return scenario_ == RpcScenarioKind::OnHostAll ? PayloadLoc::HostDram
                                                 : PayloadLoc::SocDram;
}

void RpcSubsystem::ingest(bool latency_client, uint32_t kind, uint32_t slo,
                          uint64_t service_ns) {
  Rx& rx = rx_[next_rx_];
  next_rx_ = (next_rx_ + 1) % int(rx_.size());
  SimTime start{std::max(sim_.now().ns, rx.busy_until.ns)};
  rx.busy_until = start + cfg_.parse_ns;
  CpuId rx_cpu = rx.on_ipu ? ipu_cpu(rx.cpu) : host_cpu(rx.cpu);
  sim_.charge(rx_cpu, CostKind::RpcWork, cfg_.parse_ns);

  uint64_t req = next_req_++;
  RpcRequest r;
  r.req_id = req;
  r.latency_client = latency_client;
  r.kind = kind;
  r.slo_class = slo;
  r.service_ns = service_ns;
  r.payload_loc = payload_loc();
  r.arrival = sim_.now();
  inflight_[req] = r;
  ++ingested_;

  // Stash the payload where the stack runs, then steer the request (SLO
  // rides in the entry) to the scheduler once parsing finishes.
  HostKernel::SpawnSpec spec;
  spec.kind = kind;
  spec.slo_class = slo;
  spec.service_ns = service_ns;
  spec.req_id = req;
  bool on_ipu = rx.on_ipu;
  int cpu = rx.cpu;
  size_t qidx = rx.queue_idx;
  sim_.schedule(rx.busy_until, [this, spec, on_ipu, cpu, qidx] {
    if (on_ipu) {
      // SoC-local stash: coherent stores, charged per word.
      sim_.charge(ipu_cpu(cpu), CostKind::RpcWork,
                  (cfg_.payload_bytes / 8) *
                      runtime_.fabric().model().ipu_wb_word_ns);
      kernel_.spawn_thread_from_ipu(spec, {cpu, true}, qidx);
    } else {
      kernel_.spawn_thread_from_host(spec, cpu, qidx);
    }
  });
}

uint64_t RpcSubsystem::payload_stall(int cpu, Thread& t) {
  if (t.req_id == 0) return 0;
  auto it = inflight_.find(t.req_id);
  if (it == inflight_.end() || it->second.payload_loc == PayloadLoc::HostDram)
    return 0;
  // SoC payload: one WT line fetch per cache line; each request's stash
  // is fresh so every line misses.
  const LatencyModel& m = runtime_.fabric().model();
  uint64_t lines = (cfg_.payload_bytes + kCacheLine - 1) / kCacheLine;
  uint64_t cost = lines * m.mmio_read_ns;
  sim_.charge(host_cpu(cpu), CostKind::MmioRead, cost);
  return cost;
}

uint64_t RpcSubsystem::response_cost(int cpu, Thread& t) {
  if (t.req_id == 0) return 0;
  auto it = inflight_.find(t.req_id);
  if (it == inflight_.end()) return 0;
  const LatencyModel& m = runtime_.fabric().model();
  uint64_t cost = 0;
  if (it->second.payload_loc == PayloadLoc::SocDram) {
    // Response rides WC stores into the stack's SoC ring.
    uint64_t lines = (cfg_.response_bytes + kCacheLine - 1) / kCacheLine;
    cost = (cfg_.response_bytes / 8) * m.wc_store_ns + lines * m.wc_flush_ns;
    sim_.charge(host_cpu(cpu), CostKind::MmioWrite, cost);
  }
  // The stack sends the wire response off the worker's critical path.
  Rx& rx = rx_[size_t(next_rx_)];
  CpuId rx_cpu = rx.on_ipu ? ipu_cpu(rx.cpu) : host_cpu(rx.cpu);
  sim_.charge(rx_cpu, CostKind::RpcWork, cfg_.respond_ns);
  return cost;
}

void RpcSubsystem::record_completion(const Thread& t, SimTime departed_at) {
  if (t.req_id == 0) return;
  auto it = inflight_.find(t.req_id);
  if (it == inflight_.end()) throw DuplicateCompletion(t.req_id);
  Completion c;
  c.req_id = t.req_id;
  c.latency_client = it->second.latency_client;
  c.kind = it->second.kind;
  c.latency_ns = departed_at - it->second.arrival;
  inflight_.erase(it);
  ++completed_;
  if (sink_) sink_(c);
}

}  // namespace wavesim
