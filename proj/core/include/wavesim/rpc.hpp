// SPDX-License-Identifier: Apache-2.0
//
// Synthetic RPC subsystem under the three deployment scenarios: request
// arrival and parsing on the RPC stack's CPUs, payload stashing (host
// DRAM or SoC DRAM), SLO-tagged steering into queues shared with the
// scheduler agent, worker payload reads, and the response path.

#pragma once

#include <set>
#include <vector>

#include "wavesim/host_kernel.hpp"
#include "wavesim/workload.hpp"

namespace wavesim {

enum class RpcScenarioKind : uint8_t { OnHostAll, OnHostScheduler, OffloadAll };

RpcScenarioKind rpc_scenario_from_name(const std::string& name);
const char* rpc_scenario_name(RpcScenarioKind k);

enum class PayloadLoc : uint8_t { HostDram, SocDram };

struct RpcConfig {
  int rx_actors_onhost = 8;  // host CPUs running the on-host RPC stack
  int rx_actors_ipu = 2;     // IPU CPUs when the stack is offloaded
  uint64_t parse_ns = 1'000;     // per-request protocol processing
  uint64_t respond_ns = 500;     // response handling on the stack
  uint64_t payload_bytes = 256;  // request payload stash size
  uint64_t response_bytes = 128;
  double latency_client_fraction = 0.01;
};

class DuplicateCompletion : public SimError {
 public:
  explicit DuplicateCompletion(uint64_t req)
      : SimError("request " + std::to_string(req) + " completed twice") {}
};

struct RpcRequest {
  uint64_t req_id = 0;
  bool latency_client = false;
  uint32_t kind = 0;
  uint32_t slo_class = 0;
  uint64_t service_ns = 0;
  PayloadLoc payload_loc = PayloadLoc::SocDram;
  SimTime arrival{0};
};

// Wires arrivals through RX actors into the scheduler's steering queues
// and charges payload/response transfers on the workers via the host
// kernel hooks.
class RpcSubsystem {
 public:
  RpcSubsystem(WaveRuntime& runtime, HostKernel& kernel, int enclave_id,
               RpcScenarioKind scenario, RpcConfig cfg, int workers);

  // Ingest one arrival (already timestamped "on the wire").
  void ingest(bool latency_client, uint32_t kind, uint32_t slo,
              uint64_t service_ns);

  // Completion record: latency by (client, kind); duplicate ids throw.
  struct Completion {
    uint64_t req_id;
    bool latency_client;
    uint32_t kind;
    uint64_t latency_ns;
  };
  void record_completion(const Thread& t, SimTime departed_at);
  using CompletionSink = std::function<void(const Completion&)>;
  void set_completion_sink(CompletionSink s) { sink_ = std::move(s); }

  // Host-kernel hooks (worker-side payload read / response write).
  uint64_t payload_stall(int cpu, Thread& t);
  uint64_t response_cost(int cpu, Thread& t);

  PayloadLoc payload_loc() const;
  uint64_t ingested() const { return ingested_; }
  uint64_t completed() const { return completed_; }
  size_t steering_queues() const { return rx_count_; }

 private:
  struct Rx {
    bool on_ipu;
    int cpu;
    SimTime busy_until{0};
    size_t queue_idx;  // steering queue feeding the scheduler
  };

  WaveRuntime& runtime_;
  HostKernel& kernel_;
  Simulator& sim_;
  int enclave_id_;
  RpcScenarioKind scenario_;
  RpcConfig cfg_;
  std::vector<Rx> rx_;
  size_t rx_count_ = 0;
  int next_rx_ = 0;
  uint64_t next_req_ = 1;
  uint64_t payload_region_ = 0;  // SoC stash when the stack is offloaded
  uint64_t ingested_ = 0, completed_ = 0;
  std::unordered_map<uint64_t, RpcRequest> inflight_;
  std::set<uint64_t> done_;
  CompletionSink sink_;
};

}  // namespace wavesim
