// SPDX-License-Identifier: Apache-2.0

#include <deque>

#include "doctest.h"
#include "wavesim/queues.hpp"
#include "wavesim/rng.hpp"

using namespace wavesim;

namespace {

struct QRig {
  Simulator sim;
  PcieFabric fabric;
  QRig() : fabric(sim, latency_profile("mount-evans"), 4) {}

  MessageQueue make(QueueConfig cfg, const std::string& name = "q") {
    return MessageQueue(fabric, cfg, name);
  }
};

std::vector<uint8_t> entry(uint64_t tag) {
  std::vector<uint8_t> e(56, 0);
  std::memcpy(e.data(), &tag, 8);
  return e;
}

uint64_t tag_of(const std::vector<uint8_t>& e) {
  uint64_t t;
  std::memcpy(&t, e.data(), 8);
  return t;
}

}  // namespace

TEST_CASE("enqueue then poll round-trips the entry") {
  QRig r;
  QueueConfig cfg;
  cfg.capacity = 16;
  auto q = r.make(cfg);
  q.set_host_producer({0, PteType::WC});
  q.set_ipu_consumer({0, true});
  CHECK(q.enqueue(entry(99)) == EnqueueResult::Ok);
  r.sim.run_all();  // flag visibility
  auto got = q.poll();
  REQUIRE(got.has_value());
  CHECK(tag_of(*got) == 99);
  CHECK(!q.poll().has_value());
}

TEST_CASE("WC-buffered entry is invisible until the flush lands") {
  QRig r;
  QueueConfig cfg;
  cfg.capacity = 16;
  auto q = r.make(cfg);
  q.set_host_producer({0, PteType::WC});
  q.set_ipu_consumer({0, true});
  q.enqueue(entry(1));
  // Before visibility events run, the consumer sees nothing.
  CHECK(!q.consumable());
  CHECK(!q.poll().has_value());
  r.sim.run_all();
  CHECK(q.consumable());
  CHECK(q.poll().has_value());
}

TEST_CASE("overflow raises the agent-crash hook on the extra enqueue") {
  QRig r;
  QueueConfig cfg;
  cfg.capacity = 8;
  auto q = r.make(cfg);
  q.set_host_producer({0, PteType::UC});
  q.set_ipu_consumer({0, true});
  int crashes = 0;
  q.set_overflow_handler([&] { ++crashes; });
  for (uint32_t i = 0; i < 8; ++i)
    CHECK(q.enqueue(entry(i)) == EnqueueResult::Ok);
  CHECK(q.enqueue(entry(8)) == EnqueueResult::Overflow);
  CHECK(crashes == 1);
}

TEST_CASE("reserve-check mode returns QueueFull instead of crashing") {
  QRig r;
  QueueConfig cfg;
  cfg.capacity = 8;
  cfg.reserve_check = true;
  cfg.reserve_interval = 4;
  auto q = r.make(cfg);
  q.set_host_producer({0, PteType::UC});
  q.set_ipu_consumer({0, true});
  int crashes = 0;
  q.set_overflow_handler([&] { ++crashes; });
  for (uint32_t i = 0; i < 8; ++i)
    CHECK(q.enqueue(entry(i)) == EnqueueResult::Ok);
  CHECK(q.enqueue(entry(8)) == EnqueueResult::QueueFull);
  CHECK(crashes == 0);
  // The periodic credit refresh costs a cross-bus read.
  CHECK(r.sim.ledger().busy_ns(host_cpu(0), CostKind::MmioRead) > 0);
}

TEST_CASE("oversized entries are rejected") {
  QRig r;
  QueueConfig cfg;
  cfg.capacity = 8;
  auto q = r.make(cfg);
  q.set_host_producer({0, PteType::WC});
  std::vector<uint8_t> big(57, 0);
  CHECK(q.enqueue(big) == EnqueueResult::EntryTooLarge);
}

// Property: any interleaved produce/consume schedule over either backing
// matches a plain in-memory FIFO (the queue's internal shadow also checks
// this on every poll; the test re-verifies externally).
TEST_CASE("randomized interleavings preserve FIFO order on both backings") {
  for (QueueBacking backing : {QueueBacking::Mmio, QueueBacking::Dma}) {
    QRig r;
    QueueConfig cfg;
    cfg.capacity = 64;
    cfg.backing = backing;
    cfg.dma_batch = 8;
    auto q = r.make(cfg);
    q.set_host_producer({0, PteType::WC});
    q.set_ipu_consumer({0, true});
    Rng rng(2024 + int(backing));
    std::deque<uint64_t> ref;
    uint64_t next_tag = 1;
    uint64_t consumed = 0, produced = 0;
    const uint64_t target = 100'000;
    while (consumed < target) {
      bool produce = produced < target &&
                     (produced - consumed < 60) &&
                     (rng.next_below(2) == 0 || produced == consumed);
      if (produce) {
        REQUIRE(q.enqueue(entry(next_tag)) == EnqueueResult::Ok);
        ref.push_back(next_tag);
        ++next_tag;
        ++produced;
      }
      // Let visibility events land at random boundaries.
      if (rng.next_below(4) == 0) r.sim.run_all();
      auto got = q.poll();
      if (got) {
        REQUIRE(!ref.empty());
        REQUIRE(tag_of(*got) == ref.front());
        ref.pop_front();
        ++consumed;
      }
    }
    CHECK(q.consumed() == target);
  }
}

TEST_CASE("DMA consumer pulls one batch for a backlog of entries") {
  QRig r;
  QueueConfig cfg;
  cfg.capacity = 64;
  cfg.backing = QueueBacking::Dma;
  cfg.dma_batch = 32;
  auto q = r.make(cfg);
  q.set_host_producer({0, PteType::WC});
  q.set_ipu_consumer({0, true});
  for (uint32_t i = 0; i < 32; ++i) q.enqueue(entry(i));
  CHECK(!q.poll().has_value());  // first poll kicks the DMA
  CHECK(q.dma_batches() == 1);
  r.sim.run_all();
  // 32 successive local dequeues, no further DMA.
  for (uint32_t i = 0; i < 32; ++i) {
    auto got = q.poll();
    REQUIRE(got.has_value());
    CHECK(tag_of(*got) == i);
  }
  CHECK(q.dma_batches() == 1);
  CHECK(r.fabric.dma_transfers() == 0);  // queue-internal pulls tracked above
}

TEST_CASE("host consumer pays MMIO to poll an IPU-produced ring") {
  QRig r;
  QueueConfig cfg;
  cfg.capacity = 16;
  auto q = r.make(cfg);
  q.set_ipu_producer({0, true});
  q.set_host_consumer({1, PteType::WT});
  q.enqueue(entry(5));
  auto got = q.poll();
  REQUIRE(got.has_value());
  CHECK(tag_of(*got) == 5);
  // One WT miss for the entry line.
  CHECK(r.sim.ledger().busy_ns(host_cpu(1), CostKind::MmioRead) == 750);
}

// ----------------------------------------------------------------- TxnRegion

namespace {
struct TRig {
  Simulator sim;
  PcieFabric fabric;
  TxnRegion txns;
  IpuEndpoint agent{0, true};
  HostEndpoint host0{0, PteType::WT};
  TRig() : fabric(sim, latency_profile("mount-evans"), 4),
           txns(fabric, 4, 0, "t") {}
  Decision mk(uint64_t tid, bool pre = false) {
    Decision d;
    d.tid = tid;
    d.prestaged = pre;
    return d;
  }
};
}  // namespace

TEST_CASE("txn lifecycle: stage, claim, complete, reset") {
  TRig r;
  CHECK(r.txns.create(r.agent, 0, r.mk(7)) == TxnOpResult::Ok);
  CHECK(r.txns.true_state(0) == TxnState::Staged);
  auto d = r.txns.read_and_claim(r.host0, 0);
  REQUIRE(d.has_value());
  CHECK(d->tid == 7);
  CHECK(r.txns.true_state(0) == TxnState::Claimed);
  CHECK(r.txns.set_outcome(r.host0, 0, TxnState::Complete) == TxnOpResult::Ok);
  r.sim.run_all();  // outcome write is posted; agent sees it after transit
  auto out = r.txns.poll_outcome(r.agent, 0);
  REQUIRE(out.has_value());
  CHECK(out->first == TxnState::Complete);
  CHECK(out->second.tid == 7);
  CHECK(r.txns.true_state(0) == TxnState::Empty);
  CHECK(r.txns.illegal_transitions() == 0);
}

TEST_CASE("create on a staged slot reports SlotBusy") {
  TRig r;
  CHECK(r.txns.create(r.agent, 0, r.mk(1)) == TxnOpResult::Ok);
  CHECK(r.txns.create(r.agent, 0, r.mk(2)) == TxnOpResult::SlotBusy);
}

TEST_CASE("outcome on a non-claimed slot is BadState") {
  TRig r;
  CHECK(r.txns.set_outcome(r.host0, 0, TxnState::Complete) ==
        TxnOpResult::BadState);
  r.txns.create(r.agent, 0, r.mk(1));
  CHECK(r.txns.set_outcome(r.host0, 0, TxnState::Complete) ==
        TxnOpResult::BadState);
  r.txns.read_and_claim(r.host0, 0);
  CHECK(r.txns.set_outcome(r.host0, 0, TxnState::Complete) == TxnOpResult::Ok);
  // COMPLETE twice.
  CHECK(r.txns.set_outcome(r.host0, 0, TxnState::Complete) ==
        TxnOpResult::BadState);
}

TEST_CASE("empty slot read returns no decision") {
  TRig r;
  CHECK(!r.txns.read_and_claim(r.host0, 0).has_value());
}

TEST_CASE("WT decision read costs one miss; prefetched read is free") {
  TRig r;
  r.txns.create(r.agent, 0, r.mk(3));
  SUBCASE("no prefetch: one line miss") {
    auto d = r.txns.read_and_claim(r.host0, 0);
    REQUIRE(d.has_value());
    CHECK(r.sim.ledger().busy_ns(host_cpu(0), CostKind::MmioRead) == 750);
  }
  SUBCASE("prefetch issued a read-latency earlier: free") {
    r.fabric.host_prefetch(0, r.txns.slot_line(0));
    r.sim.run_until(SimTime{1000});
    auto d = r.txns.read_and_claim(r.host0, 0);
    REQUIRE(d.has_value());
    CHECK(r.sim.ledger().busy_ns(host_cpu(0), CostKind::MmioRead) == 0);
  }
}

TEST_CASE("UC decision read pays per word") {
  TRig r;
  r.txns.create(r.agent, 0, r.mk(3));
  HostEndpoint uc{0, PteType::UC};
  auto d = r.txns.read_and_claim(uc, 0);
  REQUIRE(d.has_value());
  // state word + 4 payload words
  CHECK(r.sim.ledger().busy_ns(host_cpu(0), CostKind::MmioRead) == 5 * 750);
}

TEST_CASE("commit fans out one MSI-X per CPU") {
  TRig r;
  int irqs = 0;
  r.fabric.set_irq_sink([&](int, SimTime) { ++irqs; });
  for (int c = 0; c < 4; ++c) r.txns.create(r.agent, c, r.mk(10 + c));
  std::vector<int> cpus{0, 1, 2, 3};
  r.txns.commit(r.agent, cpus, true);
  r.sim.run_all();
  CHECK(irqs == 4);
  CHECK(r.fabric.msix_sent() == 4);
}

TEST_CASE("outcome write drops the cached slot line (flush point)") {
  TRig r;
  r.txns.create(r.agent, 0, r.mk(1));
  r.txns.read_and_claim(r.host0, 0);
  CHECK(r.fabric.host_line_cached(0, r.txns.slot_line(0)));
  r.txns.set_outcome(r.host0, 0, TxnState::Complete);
  CHECK(!r.fabric.host_line_cached(0, r.txns.slot_line(0)));
}
