// SPDX-License-Identifier: Apache-2.0

#include "wavesim/wave_api.hpp"

#include <cstring>
#include <map>

namespace wavesim {

std::vector<uint8_t> encode_custom_call(const CustomCall& c) {
  std::vector<uint8_t> out(12 + c.args.size());
  std::memcpy(out.data(), &c.subsystem_tag, 4);
  std::memcpy(out.data() + 4, &c.opcode, 4);
  uint32_t len = static_cast<uint32_t>(c.args.size());
  std::memcpy(out.data() + 8, &len, 4);
  std::memcpy(out.data() + 12, c.args.data(), c.args.size());
  return out;
}

CustomCall decode_custom_call(std::span<const uint8_t> bytes) {
  if (bytes.size() < 12) throw SimError("custom call frame too short");
  CustomCall c;
  std::memcpy(&c.subsystem_tag, bytes.data(), 4);
  std::memcpy(&c.opcode, bytes.data() + 4, 4);
  uint32_t len;
  std::memcpy(&len, bytes.data() + 8, 4);
  if (bytes.size() < 12 + uint64_t(len))
    throw SimError("custom call frame truncated");
  c.args.assign(bytes.begin() + 12, bytes.begin() + 12 + len);
  return c;
}

// -------------------------------------------------------------------- Enclave

Enclave::Enclave(PcieFabric& fabric, const EnclaveSpec& spec,
                 int total_host_cpus)
    : fabric_(fabric), spec_(spec) {
  if (spec.host_cpus.empty())
    throw BadConfig("enclave " + std::to_string(spec.id) + " owns no CPUs");
  cpu_set_.insert(spec.host_cpus.begin(), spec.host_cpus.end());
  if (cpu_set_.size() != spec.host_cpus.size())
    throw BadConfig("enclave " + std::to_string(spec.id) +
                    " lists a CPU twice");
  cpu_queue_.assign(total_host_cpus, 0);
  QueueConfig qc = spec.queue;
  qc.enclave_id = spec.id;
  queues_.push_back(std::make_unique<MessageQueue>(
      fabric_, qc, "e" + std::to_string(spec.id) + ".msg"));
  txns_ = std::make_unique<TxnRegion>(fabric_, total_host_cpus, spec.id,
                                      "e" + std::to_string(spec.id));
}

size_t Enclave::create_queue(const QueueConfig& cfg, const std::string& name) {
  QueueConfig qc = cfg;
  qc.enclave_id = spec_.id;
  queues_.push_back(std::make_unique<MessageQueue>(
      fabric_, qc, "e" + std::to_string(spec_.id) + "." + name));
  return queues_.size() - 1;
}

void Enclave::associate_queue_with_cpu(int cpu, size_t idx) {
  if (!owns_cpu(cpu))
    throw BadConfig("associate_queue_with_cpu: cpu " + std::to_string(cpu) +
                    " outside enclave " + std::to_string(spec_.id));
  cpu_queue_.at(cpu) = idx;
}

size_t Enclave::queue_for_cpu(int cpu) const { return cpu_queue_.at(cpu); }

// ---------------------------------------------------------------- WaveRuntime

WaveRuntime::WaveRuntime(PcieFabric& fabric, const WaveConfig& config)
    : fabric_(fabric) {
  if (config.enclaves.empty()) throw BadConfig("no enclaves configured");
  std::set<int> seen_cpus;
  std::set<int> seen_ids;
  for (const auto& spec : config.enclaves) {
    if (!seen_ids.insert(spec.id).second)
      throw BadConfig("duplicate enclave id " + std::to_string(spec.id));
    for (int cpu : spec.host_cpus) {
      if (cpu < 0 || cpu >= fabric_.host_cpus())
        throw BadConfig("enclave " + std::to_string(spec.id) +
                        " references unknown host cpu " + std::to_string(cpu));
      if (!seen_cpus.insert(cpu).second)
        throw BadConfig("host cpu " + std::to_string(cpu) +
                        " assigned to two enclaves");
    }
  }
  for (const auto& spec : config.enclaves)
    enclaves_.push_back(
        std::make_unique<Enclave>(fabric_, spec, fabric_.host_cpus()));
  irq_handlers_.resize(fabric_.host_cpus());
  fabric_.set_irq_sink(
      [this](int cpu, SimTime arrival) { dispatch_irq(cpu, arrival); });
}

Enclave& WaveRuntime::enclave(int id) {
  for (auto& e : enclaves_)
    if (e->id() == id) return *e;
  throw SimError("unknown enclave " + std::to_string(id));
}

ApiResult WaveRuntime::send_message(int enclave_id, int producer_cpu,
                                    std::span<const uint8_t> payload,
                                    PteType pte, int subject_cpu) {
  Enclave& e = enclave(enclave_id);
  e.count_access(enclave_id);
  if (subject_cpu >= 0 && !e.owns_cpu(subject_cpu))
    return ApiResult::EnclaveViolation;
  size_t qi = subject_cpu >= 0 ? e.queue_for_cpu(subject_cpu) : 0;
  MessageQueue& q = e.queue(qi);
  q.set_host_producer({producer_cpu, pte});
  EnqueueResult r = q.enqueue(payload);
  if (r == EnqueueResult::Overflow) return ApiResult::Overflow;
  return ApiResult::Ok;
}

ApiResult WaveRuntime::register_irq_handler(int cpu, IrqHandler handler) {
  if (cpu < 0 || cpu >= static_cast<int>(irq_handlers_.size()))
    throw BadVector(cpu);
  if (irq_handlers_[cpu]) return ApiResult::AlreadyRegistered;
  irq_handlers_[cpu] = std::move(handler);
  return ApiResult::Ok;
}

void WaveRuntime::dispatch_irq(int cpu, SimTime arrival) {
  if (cpu < 0 || cpu >= static_cast<int>(irq_handlers_.size()) ||
      !irq_handlers_[cpu]) {
    ++dropped_irqs_;
    return;
  }
  (*irq_handlers_[cpu])(cpu, arrival);
}

void WaveRuntime::register_custom_handler(uint32_t subsystem_tag,
                                          uint32_t opcode, int shim_host_cpu,
                                          CustomHandler handler) {
  custom_handlers_[{subsystem_tag, opcode}] = {shim_host_cpu,
                                               std::move(handler)};
}

ApiResult WaveRuntime::custom_call(
    int enclave_id, AgentLocation agent, const CustomCall& call,
    CallTransport transport,
    std::function<void(std::vector<uint8_t>)> reply_cb) {
  Enclave& e = enclave(enclave_id);
  e.count_access(enclave_id);
  auto it = custom_handlers_.find({call.subsystem_tag, call.opcode});
  if (it == custom_handlers_.end()) return ApiResult::UnknownOpcode;
  const HandlerEntry& entry = it->second;
  std::vector<uint8_t> frame = encode_custom_call(call);
  Simulator& sim = fabric_.sim();
  const LatencyModel& lat = fabric_.model();

  // The call frame already sits on the caller's side; the shim is invoked
  // after the notification + argument transfer, computes the reply, and
  // the reply travels back before the agent's callback runs. Costs follow
  // the transport: DMA legs for bulk, per-word MMIO reads for small calls.
  int shim = entry.shim_cpu;
  auto run_shim = [this, frame = std::move(frame), entry, reply_cb, agent,
                   transport, shim, &sim, &lat]() mutable {
    CustomCall decoded = decode_custom_call(frame);
    uint64_t arg_words = (frame.size() + 7) / 8;
    uint64_t arg_cost = 0;
    if (transport == CallTransport::Mmio) {
      arg_cost = arg_words * lat.mmio_read_ns;
      sim.charge(host_cpu(shim), CostKind::MmioRead, arg_cost);
    }
    std::vector<uint8_t> reply = entry.fn(decoded.args);
    uint64_t reply_delay;
    if (transport == CallTransport::Dma) {
      uint64_t lines = (std::max<uint64_t>(reply.size(), 1) + kCacheLine - 1) /
                       kCacheLine;
      reply_delay = lat.dma_setup_ns + lines * lat.dma_per_cacheline_ns;
      sim.charge(host_cpu(shim), CostKind::DmaSetup, lat.dma_setup_ns);
    } else {
      uint64_t words = (reply.size() + 7) / 8;
      sim.charge(host_cpu(shim), CostKind::MmioWrite,
                 words * lat.mmio_write_ns);
      reply_delay = lat.mmio_transit_ns;
    }
    sim.after(arg_cost + reply_delay,
              [reply = std::move(reply), reply_cb = std::move(reply_cb)] {
                if (reply_cb) reply_cb(std::move(reply));
              });
  };

  if (agent.on_ipu) {
    // Notify the shim CPU; argument bytes travel by the chosen transport.
    uint64_t args_delay = 0;
    if (transport == CallTransport::Dma) {
      uint64_t lines =
          (std::max<uint64_t>(frame.size(), 1) + kCacheLine - 1) / kCacheLine;
      args_delay = lat.dma_setup_ns + lines * lat.dma_per_cacheline_ns;
      sim.charge(ipu_cpu(agent.cpu), CostKind::DmaSetup, lat.dma_setup_ns);
    }
    sim.charge(ipu_cpu(agent.cpu), CostKind::MsixSend, lat.msix_send_ns);
    sim.after(lat.msix_e2e_ns + args_delay, std::move(run_shim));
  } else {
    // On-host agent: shim call is a coherent hop.
    sim.after(0, std::move(run_shim));
  }
  return ApiResult::Ok;
}

}  // namespace wavesim
