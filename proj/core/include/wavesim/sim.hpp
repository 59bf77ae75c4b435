// SPDX-License-Identifier: Apache-2.0
//
// Deterministic discrete-event core: virtual nanosecond clock, an event
// queue ordered by (fire time, insertion sequence), and per-CPU cost
// accounting. Everything else in the simulator is built on top of this.

#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <queue>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace wavesim {

// Virtual nanoseconds since simulation start. 64 bits never wrap within a
// run (5.8e10 seconds).
struct SimTime {
  uint64_t ns = 0;
  constexpr auto operator<=>(const SimTime&) const = default;
};

constexpr SimTime operator+(SimTime t, uint64_t d) { return {t.ns + d}; }
constexpr uint64_t operator-(SimTime a, SimTime b) { return a.ns - b.ns; }

class SimError : public std::runtime_error {
 public:
  explicit SimError(const std::string& what) : std::runtime_error(what) {}
};

// Scheduling an event in the past is always a bug in the caller.
class PastEventError : public SimError {
 public:
  explicit PastEventError(const std::string& what) : SimError(what) {}
};

// Raised when a built-in audit (txn state machine, thread lifecycle,
// enclave isolation, stale-read shadow) observes an illegal state.
class InvariantViolation : public SimError {
 public:
  explicit InvariantViolation(const std::string& what) : SimError(what) {}
};

using EventId = uint64_t;
using EventFn = std::function<void()>;

// Simulated processors. Host CPUs run workload threads and kernel
// mechanism code; IPU CPUs run agents and the offloaded RPC stack.
enum class CpuKind : uint8_t { Host, Ipu };

struct CpuId {
  CpuKind kind = CpuKind::Host;
  int index = 0;
  bool operator==(const CpuId&) const = default;
};

inline CpuId host_cpu(int i) { return {CpuKind::Host, i}; }
inline CpuId ipu_cpu(int i) { return {CpuKind::Ipu, i}; }

// What a charged nanosecond was spent on, for the conservation audit and
// the per-run counter columns.
enum class CostKind : uint8_t {
  MmioRead,
  MmioWrite,
  WcFlush,
  Clflush,
  MsixSend,
  MsixReceive,
  DmaSetup,
  KernelWork,      // block bookkeeping + dispatch mechanics
  Service,         // workload service time
  AgentCompute,    // policy loop work on the IPU (or on-host agent CPU)
  RpcWork,         // RPC stack parse/response handling
  FaultStall,      // tiering fault penalty charged to the touching thread
  kCount,
};

// Per-CPU busy-time ledger. A CPU is busy exactly when some operation
// charged time to it, so sum(categories) == busy and busy <= run span.
class CostLedger {
 public:
  void charge(CpuId cpu, CostKind kind, uint64_t ns) {
    auto& row = rows_[key(cpu)];
    row.by_kind[static_cast<size_t>(kind)] += ns;
    row.total += ns;
  }
  uint64_t busy_ns(CpuId cpu) const {
    auto it = rows_.find(key(cpu));
    return it == rows_.end() ? 0 : it->second.total;
  }
  uint64_t busy_ns(CpuId cpu, CostKind kind) const {
    auto it = rows_.find(key(cpu));
    return it == rows_.end() ? 0
                             : it->second.by_kind[static_cast<size_t>(kind)];
  }
  uint64_t total_ns(CostKind kind) const {
    uint64_t sum = 0;
    for (const auto& [k, row] : rows_)
      sum += row.by_kind[static_cast<size_t>(kind)];
    return sum;
  }
  uint64_t total_ns() const {
    uint64_t sum = 0;
    for (const auto& [k, row] : rows_) sum += row.total;
    return sum;
  }
  bool categories_sum_to_total() const {
    for (const auto& [k, row] : rows_) {
      uint64_t s = 0;
      for (uint64_t v : row.by_kind) s += v;
      if (s != row.total) return false;
    }
    return true;
  }

 private:
  struct Row {
    uint64_t by_kind[static_cast<size_t>(CostKind::kCount)] = {};
    uint64_t total = 0;
  };
  static uint64_t key(CpuId cpu) {
    return (static_cast<uint64_t>(cpu.kind) << 32) |
           static_cast<uint32_t>(cpu.index);
  }
  std::unordered_map<uint64_t, Row> rows_;
};

// Single-threaded event scheduler. All parallelism (host CPUs, IPU CPUs,
// the DMA engine) is virtual; ties at equal fire time dispatch in
// insertion order, which makes runs bit-reproducible.
class Simulator {
 public:
  SimTime now() const { return now_; }

  EventId schedule(SimTime fire_at, EventFn fn) {
    if (fire_at < now_)
      throw PastEventError("schedule: fire_at " + std::to_string(fire_at.ns) +
                           " < now " + std::to_string(now_.ns));
    EventId id = next_seq_++;
    heap_.push(Entry{fire_at, id, std::move(fn)});
    ++pending_;
    return id;
  }

  EventId after(uint64_t delay_ns, EventFn fn) {
    return schedule(now_ + delay_ns, std::move(fn));
  }

  // Lazy cancellation: the entry stays in the heap and is dropped on pop.
  void cancel(EventId id) { cancelled_.insert(id); }

  // Dispatch the next event. Returns false when the queue is drained.
  bool step() {
    while (!heap_.empty()) {
      // std::priority_queue::top is const; the handoff is by const_cast
      // since pop() immediately destroys the entry.
      Entry& top = const_cast<Entry&>(heap_.top());
      SimTime at = top.at;
      EventId id = top.seq;
      EventFn fn = std::move(top.fn);
      heap_.pop();
      --pending_;
      if (auto it = cancelled_.find(id); it != cancelled_.end()) {
        cancelled_.erase(it);
        continue;
      }
      now_ = at;
      ++dispatched_;
      fn();
      return true;
    }
    return false;
  }

  void run_until(SimTime t) {
    while (!heap_.empty() && heap_.top().at <= t) {
      if (!step()) break;
    }
    if (now_ < t) now_ = t;
  }

  void run_all() {
    while (step()) {
    }
  }

  uint64_t dispatched() const { return dispatched_; }
  size_t pending() const { return pending_; }

  CostLedger& ledger() { return ledger_; }
  const CostLedger& ledger() const { return ledger_; }

  void charge(CpuId cpu, CostKind kind, uint64_t ns) {
    ledger_.charge(cpu, kind, ns);
  }

 private:
  struct Entry {
    SimTime at;
    EventId seq;
    mutable EventFn fn;
    bool operator<(const Entry& o) const {
      // priority_queue is a max-heap; invert for (at, seq) ascending.
      if (at != o.at) return o.at < at;
      return o.seq < seq;
    }
  };

  SimTime now_{0};
  EventId next_seq_ = 0;
  uint64_t dispatched_ = 0;
  size_t pending_ = 0;
  std::priority_queue<Entry> heap_;
  std::unordered_set<EventId> cancelled_;
  CostLedger ledger_;
};

}  // namespace wavesim
