// SPDX-License-Identifier: Apache-2.0
//
// The two wire abstractions between host kernel and IPU agents:
//
//  * MessageQueue - a single-producer single-consumer ring in SoC DRAM.
//    Each slot carries its payload plus a sequence-valued flag word the
//    producer sets last; the consumer accepts a slot only when the flag
//    matches the sequence it expects. Backed by MMIO (producer writes
//    cross the bus) or DMA (consumer pulls batches).
//
//  * TxnRegion - one cache line per host CPU holding a staged policy
//    decision with an EMPTY -> STAGED -> CLAIMED -> {COMPLETE, FAILED} ->
//    EMPTY lifecycle. Agents stage locally; the host claims via MMIO.
//
// Both carry always-on shadow audits (golden FIFO, legal-transition
// table, stale-claim detection).

#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wavesim/fabric.hpp"

namespace wavesim {

enum class QueueBacking : uint8_t { Mmio, Dma };

enum class EnqueueResult : uint8_t {
  Ok,
  Overflow,       // ring full in crash-on-overflow mode
  QueueFull,      // ring full in reserve-check mode
  EntryTooLarge,
};

struct QueueConfig {
  QueueBacking backing = QueueBacking::Mmio;
  uint32_t capacity = 65536;  // entries, power of two
  uint32_t entry_size = 64;   // bytes, including the 8-byte flag word
  int enclave_id = 0;
  bool reserve_check = false;      // producer reserves slot batches
  uint32_t reserve_interval = 1024;
  uint32_t dma_batch = 64;         // entries per consumer DMA pull
};

struct HostEndpoint {
  int cpu = 0;
  PteType pte = PteType::WC;
};
struct IpuEndpoint {
  int cpu = 0;
  bool wb_mapped = true;
};

class MessageQueue {
 public:
  MessageQueue(PcieFabric& fabric, QueueConfig cfg, std::string name);

  void set_host_producer(HostEndpoint ep) { host_prod_ = ep; ipu_prod_.reset(); }
  void set_ipu_producer(IpuEndpoint ep) { ipu_prod_ = ep; host_prod_.reset(); }
  void set_ipu_consumer(IpuEndpoint ep) { ipu_cons_ = ep; host_cons_.reset(); }
  void set_host_consumer(HostEndpoint ep) { host_cons_ = ep; ipu_cons_.reset(); }

  // Invoked on ring overflow in crash mode; wired to the enclave's
  // agent-crash path.
  void set_overflow_handler(std::function<void()> fn) {
    on_overflow_ = std::move(fn);
  }
  // Invoked when a flag becomes observable to the consumer (new entry, or
  // DMA batch landed). Drives event-driven agent wakeups.
  void set_waker(std::function<void()> fn) { waker_ = std::move(fn); }

  EnqueueResult enqueue(std::span<const uint8_t> payload);
  std::optional<std::vector<uint8_t>> poll();

  // True when a poll right now would return an entry (no cost charged).
  bool consumable() const;

  uint64_t enqueued() const { return produced_; }
  uint64_t consumed() const { return consumed_; }
  uint64_t occupancy() const { return produced_ - consumed_; }
  uint64_t dma_batches() const { return dma_batches_; }
  int enclave_id() const { return cfg_.enclave_id; }
  const std::string& name() const { return name_; }
  const QueueConfig& config() const { return cfg_; }

  // Drain-then-destroy support: no new entries accepted.
  void close() { closed_ = true; }
  bool closed() const { return closed_; }

 private:
  uint64_t slot_addr(uint64_t seq) const {
    return base_ + (seq & (cfg_.capacity - 1)) * cfg_.entry_size;
  }
  uint64_t flag_addr(uint64_t seq) const {
    return slot_addr(seq) + cfg_.entry_size - 8;
  }
  uint64_t payload_bytes() const { return cfg_.entry_size - 8; }
  void start_dma_pull();

  PcieFabric& fabric_;
  QueueConfig cfg_;
  std::string name_;
  uint64_t base_ = 0;

  std::optional<HostEndpoint> host_prod_, host_cons_;
  std::optional<IpuEndpoint> ipu_prod_, ipu_cons_;

  uint64_t produced_ = 0;  // next sequence to produce
  uint64_t consumed_ = 0;  // next sequence to consume
  bool closed_ = false;

  // Reserve-check mode bookkeeping.
  uint64_t credits_ = 0;
  uint64_t since_check_ = 0;

  // DMA backing: producer-side staging array (host DRAM when the host
  // produces) and the consumer's pulled-batch buffer.
  std::vector<uint8_t> prod_array_;
  std::deque<std::vector<uint8_t>> staged_;
  bool dma_in_flight_ = false;
  uint64_t dma_batches_ = 0;

  // Golden in-order shadow of produced payloads; poll() verifies against
  // it, which subsumes loss/duplication/reorder/torn-read checks.
  std::deque<std::vector<uint8_t>> shadow_;

  std::function<void()> on_overflow_;
  std::function<void()> waker_;
};

// ------------------------------------------------------------------ TxnRegion

enum class TxnState : uint8_t {
  Empty = 0,
  Staged = 1,
  Claimed = 2,
  Complete = 3,
  Failed = 4,
};

const char* txn_state_name(TxnState s);

enum class DecisionKind : uint32_t { RunThread = 1 };

struct Decision {
  DecisionKind kind = DecisionKind::RunThread;
  uint64_t tid = 0;
  uint64_t arg = 0;
  bool prestaged = false;
  uint64_t seq = 0;  // txn sequence, filled by the region
};

enum class TxnOpResult : uint8_t { Ok, SlotBusy, BadState, NoDecision };

class TxnRegion {
 public:
  TxnRegion(PcieFabric& fabric, int host_cpus, int enclave_id,
            std::string name);

  // Agent side (SoC-local).
  TxnOpResult create(IpuEndpoint agent, int host_cpu, Decision d);
  void commit(IpuEndpoint agent, std::span<const int> host_cpus, bool notify);
  // Observes a resolved (COMPLETE/FAILED) slot, resets it to EMPTY, and
  // returns the outcome with the decision that was resolved.
  std::optional<std::pair<TxnState, Decision>> poll_outcome(IpuEndpoint agent,
                                                            int host_cpu);

  // Host side. read_and_claim charges the read path per mapping type and
  // transitions STAGED -> CLAIMED. `use_wt` selects the WT-cached decision
  // read; prefetching is the caller issuing fabric.host_prefetch earlier.
  std::optional<Decision> read_and_claim(HostEndpoint host, int host_cpu);
  TxnOpResult set_outcome(HostEndpoint host, int host_cpu, TxnState outcome);

  uint64_t slot_line(int host_cpu) const {
    return base_ + static_cast<uint64_t>(host_cpu) * kCacheLine;
  }
  uint64_t base() const { return base_; }
  uint64_t span() const { return slots_.size() * kCacheLine; }
  int enclave_id() const { return enclave_; }

  // Simulator-truth state, used by audits and tests (never charged).
  TxnState true_state(int host_cpu) const { return slots_[host_cpu].state; }
  // Decision occupying a non-EMPTY slot (staged/claimed/resolved).
  const Decision& current_decision(int host_cpu) const {
    return slots_[host_cpu].staged;
  }
  uint64_t transitions() const { return transitions_; }
  uint64_t illegal_transitions() const { return illegal_; }
  uint64_t stale_claims() const { return stale_claims_; }
  uint64_t missed_staged() const { return missed_staged_; }

 private:
  struct Slot {
    TxnState state = TxnState::Empty;
    uint64_t seq = 0;
    Decision staged;
  };
  void write_slot(IpuEndpoint agent, int host_cpu, TxnState st,
                  const Decision& d);
  void transition(int host_cpu, TxnState from, TxnState to);

  PcieFabric& fabric_;
  int enclave_;
  std::string name_;
  uint64_t base_;
  std::vector<Slot> slots_;
  uint64_t transitions_ = 0;
  uint64_t illegal_ = 0;
  uint64_t stale_claims_ = 0;
  uint64_t missed_staged_ = 0;
};

}  // namespace wavesim
