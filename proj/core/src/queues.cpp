// SPDX-License-Identifier: Apache-2.0

#include "wavesim/queues.hpp"

#include <algorithm>
#include <cassert>
#include <cstdio>
#include <cstring>

namespace wavesim {

namespace {
uint64_t le64(const uint8_t* p) {
  uint64_t v;
  std::memcpy(&v, p, 8);
  return v;
}
}  // namespace

MessageQueue::MessageQueue(PcieFabric& fabric, QueueConfig cfg,
                           std::string name)
    : fabric_(fabric), cfg_(cfg), name_(std::move(name)) {
  if ((cfg_.capacity & (cfg_.capacity - 1)) != 0 || cfg_.capacity == 0)
    throw SimError("queue capacity must be a power of two: " + name_);
  if (cfg_.entry_size < 16 || (cfg_.entry_size % 8) != 0)
    throw SimError("queue entry_size must be >= 16 and word-aligned");
  uint64_t bytes = uint64_t(cfg_.capacity) * cfg_.entry_size;
  if (cfg_.backing == QueueBacking::Mmio) {
    base_ = fabric_.soc().alloc("q:" + name_, bytes, cfg_.enclave_id);
    // Wake the consumer when a flag word commits. Payload-only commits
    // (UC word stores mid-entry) are filtered out.
    fabric_.soc().watch(base_, bytes, [this](uint64_t addr, uint64_t len) {
      if (!waker_) return;
      uint64_t first = addr, last = addr + len - 1;
      uint64_t entry0 = (first - base_) / cfg_.entry_size;
      uint64_t entry1 = (last - base_) / cfg_.entry_size;
      for (uint64_t e = entry0; e <= entry1; ++e) {
        uint64_t fa = base_ + e * cfg_.entry_size + cfg_.entry_size - 8;
        if (fa >= first && fa < addr + len) {
          waker_();
          return;
        }
      }
    });
  } else {
    prod_array_.assign(bytes, 0);
    credits_ = cfg_.capacity;
  }
  if (cfg_.reserve_check) credits_ = cfg_.capacity;
}

EnqueueResult MessageQueue::enqueue(std::span<const uint8_t> payload) {
  if (payload.size() > payload_bytes()) return EnqueueResult::EntryTooLarge;
  if (closed_) return EnqueueResult::QueueFull;

  auto refresh_credits = [&] {
    // One cross-bus read of the consumer head amortized over a batch of
    // reservations.
    if (host_prod_)
      fabric_.sim().charge(host_cpu(host_prod_->cpu), CostKind::MmioRead,
                           fabric_.model().mmio_read_ns);
    credits_ = cfg_.capacity - occupancy();
    since_check_ = 0;
  };

  if (cfg_.reserve_check) {
    if (++since_check_ >= cfg_.reserve_interval || credits_ == 0)
      refresh_credits();
    if (credits_ == 0) return EnqueueResult::QueueFull;
    --credits_;
  } else if (occupancy() >= cfg_.capacity) {
    // Overflow is a policy bug, not a flow-control condition.
    if (on_overflow_) on_overflow_();
    return EnqueueResult::Overflow;
  }

  uint64_t seq = produced_++;
  std::vector<uint8_t> padded(payload_bytes(), 0);
  std::memcpy(padded.data(), payload.data(), payload.size());
  shadow_.push_back(padded);

  if (cfg_.backing == QueueBacking::Mmio) {
    uint64_t addr = slot_addr(seq);
    uint64_t flag = seq + 1;
    if (host_prod_) {
      fabric_.host_write(host_prod_->cpu, addr, padded.data(), padded.size(),
                         host_prod_->pte);
      fabric_.host_write_word(host_prod_->cpu, flag_addr(seq), flag,
                              host_prod_->pte);
      if (host_prod_->pte == PteType::WC) fabric_.host_fence(host_prod_->cpu);
    } else if (ipu_prod_) {
      fabric_.ipu_write(ipu_prod_->cpu, addr, padded.data(), padded.size(),
                        ipu_prod_->wb_mapped);
      fabric_.ipu_write_word(ipu_prod_->cpu, flag_addr(seq), flag,
                             ipu_prod_->wb_mapped);
    } else {
      throw SimError("queue " + name_ + " has no producer endpoint");
    }
  } else {
    // DMA backing: the producer writes its local staging array (plain
    // cached stores, not priced) and the consumer pulls batches.
    uint64_t off = (seq & (cfg_.capacity - 1)) * cfg_.entry_size;
    std::memcpy(prod_array_.data() + off, padded.data(), padded.size());
    uint64_t flag = seq + 1;
    std::memcpy(prod_array_.data() + off + cfg_.entry_size - 8, &flag, 8);
    if (waker_) waker_();
  }
  return EnqueueResult::Ok;
}

bool MessageQueue::consumable() const {
  if (!staged_.empty()) return true;
  if (cfg_.backing == QueueBacking::Dma) return produced_ > consumed_;
  if (consumed_ >= produced_) return false;
  // Visible only once the flag word committed to SoC memory.
  uint64_t fa = base_ + (consumed_ & (cfg_.capacity - 1)) * cfg_.entry_size +
                cfg_.entry_size - 8;
  uint64_t flag;
  fabric_.soc().read(fa, reinterpret_cast<uint8_t*>(&flag), 8);
  return flag == consumed_ + 1;
}

void MessageQueue::start_dma_pull() {
  if (dma_in_flight_) return;
  uint64_t pulled = consumed_ + staged_.size();
  if (produced_ <= pulled) return;
  uint64_t idx = pulled & (cfg_.capacity - 1);
  uint64_t n = std::min<uint64_t>(cfg_.dma_batch, cfg_.capacity - idx);
  uint64_t off = idx * cfg_.entry_size;
  uint64_t len = n * cfg_.entry_size;
  dma_in_flight_ = true;
  ++dma_batches_;
  int cons_cpu = ipu_cons_ ? ipu_cons_->cpu : 0;
  // Modeled as a SoC-side pull of the host staging array; the fabric only
  // needs the cost shape (setup + per-line), so the bytes come straight
  // from the array at completion time.
  fabric_.sim().charge(ipu_cpu(cons_cpu), CostKind::DmaSetup,
                       fabric_.model().dma_setup_ns);
  SimTime finish = fabric_.dma_finish_time(fabric_.sim().now(), len);
  fabric_.sim().schedule(finish, [this, pulled, n, off] {
    dma_in_flight_ = false;
    for (uint64_t i = 0; i < n; ++i) {
      uint64_t seq = pulled + i;
      const uint8_t* slot = prod_array_.data() + off + i * cfg_.entry_size;
      if (le64(slot + cfg_.entry_size - 8) != seq + 1) break;
      staged_.emplace_back(slot, slot + payload_bytes());
    }
    if (!staged_.empty() && waker_) waker_();
  });
}

std::optional<std::vector<uint8_t>> MessageQueue::poll() {
  std::optional<std::vector<uint8_t>> out;

  if (cfg_.backing == QueueBacking::Dma) {
    if (staged_.empty()) {
      start_dma_pull();
      return std::nullopt;
    }
    if (ipu_cons_) {
      uint64_t words = cfg_.entry_size / 8;
      fabric_.sim().charge(
          ipu_cpu(ipu_cons_->cpu), CostKind::AgentCompute,
          words * (ipu_cons_->wb_mapped ? fabric_.model().ipu_wb_word_ns
                                        : fabric_.model().ipu_uc_word_ns));
    }
    out = std::move(staged_.front());
    staged_.pop_front();
  } else if (ipu_cons_) {
    uint64_t fa = flag_addr(consumed_);
    uint64_t flag =
        fabric_.ipu_read_word(ipu_cons_->cpu, fa, ipu_cons_->wb_mapped);
    if (flag != consumed_ + 1) return std::nullopt;
    std::vector<uint8_t> buf(payload_bytes());
    fabric_.ipu_read(ipu_cons_->cpu, slot_addr(consumed_), buf.data(),
                     buf.size(), ipu_cons_->wb_mapped);
    fabric_.ipu_write_word(ipu_cons_->cpu, fa, 0, ipu_cons_->wb_mapped);
    out = std::move(buf);
  } else if (host_cons_) {
    // Host-side consumer (scheduler left on host with the RPC stack
    // offloaded). A cached line from a previous poll is stale by
    // definition; invalidate before re-reading.
    uint64_t line = slot_addr(consumed_) & ~(kCacheLine - 1);
    if (host_cons_->pte == PteType::WT && fabric_.host_line_cached(
            host_cons_->cpu, line))
      fabric_.host_clflush(host_cons_->cpu, line);
    uint64_t flag =
        fabric_.host_read_word(host_cons_->cpu, flag_addr(consumed_),
                               host_cons_->pte);
    if (flag != consumed_ + 1) return std::nullopt;
    std::vector<uint8_t> buf(payload_bytes());
    fabric_.host_read(host_cons_->cpu, slot_addr(consumed_), buf.data(),
                      buf.size(), host_cons_->pte);
    fabric_.host_write_word(host_cons_->cpu, flag_addr(consumed_), 0,
                            host_cons_->pte);
    out = std::move(buf);
  } else {
    throw SimError("queue " + name_ + " has no consumer endpoint");
  }

  // Golden-FIFO audit: no loss, no duplication, no reorder, no tearing.
  if (shadow_.empty() || *out != shadow_.front())
    throw InvariantViolation("queue " + name_ +
                             ": consumed entry diverges from FIFO shadow");
  shadow_.pop_front();
  ++consumed_;
  return out;
}

// ------------------------------------------------------------------ TxnRegion

const char* txn_state_name(TxnState s) {
  switch (s) {
    case TxnState::Empty: return "EMPTY";
    case TxnState::Staged: return "STAGED";
    case TxnState::Claimed: return "CLAIMED";
    case TxnState::Complete: return "COMPLETE";
    case TxnState::Failed: return "FAILED";
  }
  return "?";
}

namespace {
uint64_t pack_state(TxnState st, uint64_t seq) {
  return static_cast<uint64_t>(st) | (seq << 8);
}
TxnState unpack_state(uint64_t w) { return static_cast<TxnState>(w & 0xff); }
uint64_t unpack_seq(uint64_t w) { return w >> 8; }
}  // namespace

TxnRegion::TxnRegion(PcieFabric& fabric, int host_cpus, int enclave_id,
                     std::string name)
    : fabric_(fabric), enclave_(enclave_id), name_(std::move(name)) {
  base_ = fabric_.soc().alloc("txn:" + name_,
                              uint64_t(host_cpus) * kCacheLine, enclave_);
  slots_.resize(host_cpus);
}

void TxnRegion::transition(int host_cpu, TxnState from, TxnState to) {
  static constexpr bool legal[5][5] = {
      // to: Empty Staged Claimed Complete Failed   (from:)
      {false, true, false, false, false},  // Empty
      {false, false, true, false, false},  // Staged
      {false, false, false, true, true},   // Claimed
      {true, false, false, false, false},  // Complete
      {true, false, false, false, false},  // Failed
  };
  ++transitions_;
  if (slots_[host_cpu].state != from ||
      !legal[static_cast<int>(from)][static_cast<int>(to)]) {
    ++illegal_;
    throw InvariantViolation(
        "txn slot " + std::to_string(host_cpu) + ": illegal transition " +
        txn_state_name(slots_[host_cpu].state) + " -> " + txn_state_name(to));
  }
  slots_[host_cpu].state = to;
}

void TxnRegion::write_slot(IpuEndpoint agent, int host_cpu, TxnState st,
                           const Decision& d) {
  // Agent-side stores are SoC-local and coherent. Their time cost is part
  // of the agent's configured decision-open budget, so the protocol layer
  // writes the words without an extra fabric charge.
  (void)agent;
  uint64_t line = slot_line(host_cpu);
  auto& soc = fabric_.soc();
  soc.write_word(line + 8, static_cast<uint64_t>(d.kind));
  soc.write_word(line + 16, d.tid);
  soc.write_word(line + 24, d.arg);
  soc.write_word(line + 32, d.prestaged ? 1 : 0);
  soc.write_word(line, pack_state(st, d.seq));  // state word last
}

TxnOpResult TxnRegion::create(IpuEndpoint agent, int host_cpu, Decision d) {
  Slot& slot = slots_.at(host_cpu);
  if (slot.state != TxnState::Empty) return TxnOpResult::SlotBusy;
  d.seq = ++slot.seq;
  transition(host_cpu, TxnState::Empty, TxnState::Staged);
  slot.staged = d;
  write_slot(agent, host_cpu, TxnState::Staged, d);
  return TxnOpResult::Ok;
}

void TxnRegion::commit(IpuEndpoint agent, std::span<const int> host_cpus,
                       bool notify) {
  // A racing host may have claimed the slot between the decision and this
  // commit; the vector still goes out (the host counts it spurious).
  for (int cpu : host_cpus) {
    (void)slots_.at(cpu);
    if (notify) fabric_.send_msix(agent.cpu, cpu);
  }
}

std::optional<Decision> TxnRegion::read_and_claim(HostEndpoint host,
                                                  int host_cpu) {
  uint64_t line = slot_line(host_cpu);
  uint64_t w0 = fabric_.host_read_word(host.cpu, line, host.pte);
  TxnState seen = unpack_state(w0);
  if (seen != TxnState::Staged) {
    // A read that narrowly misses a concurrent stage is fine (the agent
    // notices the idle CPU from the thread-block message and notifies);
    // count it for diagnostics.
    if (slots_[host_cpu].state == TxnState::Staged) ++missed_staged_;
    return std::nullopt;
  }
  if (unpack_seq(w0) != slots_[host_cpu].seq) {
    ++stale_claims_;
    throw InvariantViolation("stale txn sequence read on cpu " +
                             std::to_string(host_cpu));
  }
  uint8_t rest[32];
  fabric_.host_read(host.cpu, line + 8, rest, sizeof rest, host.pte);
  Decision d;
  d.kind = static_cast<DecisionKind>(le64(rest));
  d.tid = le64(rest + 8);
  d.arg = le64(rest + 16);
  d.prestaged = le64(rest + 24) != 0;
  d.seq = unpack_seq(w0);
  transition(host_cpu, TxnState::Staged, TxnState::Claimed);
  fabric_.host_write_word(host.cpu, line, pack_state(TxnState::Claimed, d.seq),
                          host.pte);
  return d;
}

TxnOpResult TxnRegion::set_outcome(HostEndpoint host, int host_cpu,
                                   TxnState outcome) {
  if (outcome != TxnState::Complete && outcome != TxnState::Failed)
    return TxnOpResult::BadState;
  Slot& slot = slots_.at(host_cpu);
  if (slot.state != TxnState::Claimed) return TxnOpResult::BadState;
  transition(host_cpu, TxnState::Claimed, outcome);
  uint64_t line = slot_line(host_cpu);
  fabric_.host_write_word(host.cpu, line, pack_state(outcome, slot.seq),
                          host.pte);
  // Outcome write is a declared flush point: the agent will reuse this
  // line for the next decision, so drop our cached copy now.
  if (host.pte == PteType::WT && fabric_.host_line_cached(host.cpu, line))
    fabric_.host_clflush(host.cpu, line);
  return TxnOpResult::Ok;
}

std::optional<std::pair<TxnState, Decision>> TxnRegion::poll_outcome(
    IpuEndpoint agent, int host_cpu) {
  Slot& slot = slots_.at(host_cpu);
  uint64_t line = slot_line(host_cpu);
  uint64_t w0 = fabric_.soc().read_word(line);
  TxnState seen = unpack_state(w0);
  if (seen != TxnState::Complete && seen != TxnState::Failed)
    return std::nullopt;
  Decision resolved = slot.staged;
  transition(host_cpu, seen, TxnState::Empty);
  (void)agent;
  fabric_.soc().write_word(line, pack_state(TxnState::Empty, slot.seq));
  return std::make_pair(seen, resolved);
}

}  // namespace wavesim
