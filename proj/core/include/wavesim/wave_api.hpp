// SPDX-License-Identifier: Apache-2.0
//
// The narrow API boundary between host kernel and IPU agents: enclave
// construction (START/CREATE_QUEUE/ASSOCIATE), message send/poll, the
// transaction calls, IRQ handler registration, and serialized custom
// subsystem extensions. Every access is tagged with the accessor's
// enclave so isolation is auditable.

#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "wavesim/queues.hpp"

namespace wavesim {

class BadConfig : public SimError {
 public:
  explicit BadConfig(const std::string& what) : SimError(what) {}
};

// Where an agent executes: a dedicated IPU CPU, or a host CPU it burns
// when the policy stays on-host.
struct AgentLocation {
  bool on_ipu = true;
  int cpu = 0;
};

struct EnclaveSpec {
  int id = 0;
  std::vector<int> host_cpus;
  std::string subsystem = "sched";
  uint64_t watchdog_deadline_ms = 20;
  AgentLocation agent;
  QueueConfig queue;  // geometry for the enclave's message queues
};

struct WaveConfig {
  std::vector<EnclaveSpec> enclaves;
};

// Serialized custom subsystem call: length-prefixed opcode plus raw
// little-endian argument bytes. Round-trips byte-exactly.
struct CustomCall {
  uint32_t subsystem_tag = 0;
  uint32_t opcode = 0;
  std::vector<uint8_t> args;
};

std::vector<uint8_t> encode_custom_call(const CustomCall& c);
CustomCall decode_custom_call(std::span<const uint8_t> bytes);

enum class ApiResult : uint8_t {
  Ok,
  EnclaveViolation,
  AlreadyRegistered,
  UnknownOpcode,
  Overflow,
};

class Enclave {
 public:
  Enclave(PcieFabric& fabric, const EnclaveSpec& spec, int total_host_cpus);

  int id() const { return spec_.id; }
  const EnclaveSpec& spec() const { return spec_; }
  bool owns_cpu(int cpu) const { return cpu_set_.count(cpu) > 0; }

  // Queue 0 is the enclave's primary host->agent message queue; further
  // queues (e.g. RPC steering, response rings) are created on demand.
  MessageQueue& queue(size_t idx = 0) { return *queues_.at(idx); }
  size_t queue_count() const { return queues_.size(); }
  size_t create_queue(const QueueConfig& cfg, const std::string& name);
  // Routes kernel events raised on `cpu` to queue `idx`.
  void associate_queue_with_cpu(int cpu, size_t idx);
  size_t queue_for_cpu(int cpu) const;
  // Drains in-flight entries (consumer keeps polling) and then removes
  // the queue from service; no new entries are accepted meanwhile.
  void destroy_queue(size_t idx) { queues_.at(idx)->close(); }

  TxnRegion& txns() { return *txns_; }

  // Agent liveness, maintained by the agent itself and consumed by the
  // host watchdog.
  void heartbeat(SimTime t) { last_heartbeat_ = t; }
  void record_decision(SimTime t) { last_decision_ = t; }
  SimTime last_heartbeat() const { return last_heartbeat_; }
  SimTime last_decision() const { return last_decision_; }
  bool agent_alive() const { return agent_alive_; }
  void set_agent_alive(bool v) { agent_alive_ = v; }

  uint64_t accesses() const { return accesses_; }
  uint64_t foreign_accesses() const { return foreign_accesses_; }
  void count_access(int accessor_enclave) {
    ++accesses_;
    if (accessor_enclave != spec_.id) ++foreign_accesses_;
  }

 private:
  PcieFabric& fabric_;
  EnclaveSpec spec_;
  std::set<int> cpu_set_;
  std::vector<std::unique_ptr<MessageQueue>> queues_;
  std::vector<size_t> cpu_queue_;  // host cpu -> queue index
  std::unique_ptr<TxnRegion> txns_;
  SimTime last_heartbeat_{0};
  SimTime last_decision_{0};
  bool agent_alive_ = true;
  uint64_t accesses_ = 0;
  uint64_t foreign_accesses_ = 0;
};

enum class CallTransport : uint8_t { Mmio, Dma };

// Runtime facade: owns the enclaves and the IRQ/custom-call registries.
class WaveRuntime {
 public:
  WaveRuntime(PcieFabric& fabric, const WaveConfig& config);

  PcieFabric& fabric() { return fabric_; }
  Enclave& enclave(int id);
  size_t enclave_count() const { return enclaves_.size(); }

  // Host-facing -----------------------------------------------------------
  // Sends a kernel event message into the enclave's queue. `producer_cpu`
  // is the host CPU charged for the enqueue; `subject_cpu` is the CPU the
  // event is about and must belong to the enclave (-1 for events that are
  // not CPU-scoped).
  ApiResult send_message(int enclave_id, int producer_cpu,
                         std::span<const uint8_t> payload, PteType pte,
                         int subject_cpu = -1);

  using IrqHandler = std::function<void(int cpu, SimTime arrival)>;
  ApiResult register_irq_handler(int cpu, IrqHandler handler);
  uint64_t dropped_irqs() const { return dropped_irqs_; }

  // Agent-facing ----------------------------------------------------------
  // Custom subsystem extension, initiated by the agent and handled by the
  // host shim for that subsystem. Bulk payloads ride DMA; small calls use
  // MMIO reads on the shim CPU. Reply is delivered asynchronously.
  using CustomHandler =
      std::function<std::vector<uint8_t>(std::span<const uint8_t> args)>;
  void register_custom_handler(uint32_t subsystem_tag, uint32_t opcode,
                               int shim_host_cpu, CustomHandler handler);
  ApiResult custom_call(int enclave_id, AgentLocation agent,
                        const CustomCall& call, CallTransport transport,
                        std::function<void(std::vector<uint8_t>)> reply_cb);

 private:
  void dispatch_irq(int cpu, SimTime arrival);

  PcieFabric& fabric_;
  std::vector<std::unique_ptr<Enclave>> enclaves_;
  std::vector<std::optional<IrqHandler>> irq_handlers_;
  uint64_t dropped_irqs_ = 0;

  struct HandlerKey {
    uint32_t subsystem, opcode;
    bool operator<(const HandlerKey& o) const {
      return subsystem != o.subsystem ? subsystem < o.subsystem
                                      : opcode < o.opcode;
    }
  };
  struct HandlerEntry {
    int shim_cpu;
    CustomHandler fn;
  };
  std::map<HandlerKey, HandlerEntry> custom_handlers_;
};

}  // namespace wavesim
