// SPDX-License-Identifier: Apache-2.0
//
// The modeled PCIe interconnect: IPU SoC memory, host-side MMIO accesses
// under UC/WC/WT page mappings, MSI-X notification, and the DMA engine.
// Host CPU caching of WT lines and the per-CPU write-combining buffer are
// modeled explicitly because the software-coherence protocol (clflush on
// interrupt entry, flush on txn outcome) depends on them.

#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "wavesim/latency.hpp"
#include "wavesim/sim.hpp"

namespace wavesim {

constexpr uint64_t kCacheLine = 64;

// UC/WC/WT are the host mapping types for MMIO over the bus. WB marks a
// coherent host-DRAM endpoint (agent left on host): zero fabric cost and
// immediate visibility.
enum class PteType : uint8_t { UC, WC, WT, WB };

class UnmappedAddress : public SimError {
 public:
  explicit UnmappedAddress(uint64_t addr)
      : SimError("unmapped SoC address " + std::to_string(addr)) {}
};

class BadVector : public SimError {
 public:
  explicit BadVector(int cpu)
      : SimError("MSI-X vector targets offline host cpu " +
                 std::to_string(cpu)) {}
};

class ZeroLength : public SimError {
 public:
  ZeroLength() : SimError("zero-length DMA transfer") {}
};

// Byte-addressable SoC DRAM with a per-word version shadow. Versions back
// the stale/torn-read audits: every committed write bumps the versions of
// the words it covers.
class SocMemory {
 public:
  uint64_t alloc(const std::string& name, uint64_t size, int enclave_id);
  bool mapped(uint64_t addr, uint64_t len) const;
  int owner_enclave(uint64_t addr) const;

  // Committed state (what a coherent SoC-side observer sees now).
  void read(uint64_t addr, uint8_t* out, uint64_t len) const;
  void write(uint64_t addr, const uint8_t* in, uint64_t len);
  uint64_t read_word(uint64_t addr) const;
  void write_word(uint64_t addr, uint64_t value);

  uint32_t word_version(uint64_t addr) const {
    return versions_[addr / 8];
  }
  uint64_t size() const { return bytes_.size(); }

  // Observers fire after a committed write that overlaps their range.
  using Observer = std::function<void(uint64_t addr, uint64_t len)>;
  void watch(uint64_t base, uint64_t len, Observer obs) {
    watchers_.push_back({base, len, std::move(obs)});
  }

 private:
  struct Region {
    uint64_t base, size;
    std::string name;
    int enclave;
  };
  struct Watcher {
    uint64_t base, len;
    Observer obs;
  };
  void notify(uint64_t addr, uint64_t len);

  std::vector<uint8_t> bytes_;
  std::vector<uint32_t> versions_;
  std::vector<Region> regions_;
  std::vector<Watcher> watchers_;
};

struct DmaDone {
  SimTime completed_at;
};

// One host CPU's view of the interconnect.
struct HostFabricCpu {
  // WT-cached lines: line base -> snapshot.
  struct Line {
    std::array<uint8_t, kCacheLine> bytes;
    SimTime installed;
  };
  std::unordered_map<uint64_t, Line> wt_lines;
  // Outstanding prefetch completion times by line base.
  std::unordered_map<uint64_t, SimTime> prefetch_due;

  // Single write-combining line buffer.
  bool wc_valid = false;
  uint64_t wc_line = 0;
  std::array<uint8_t, kCacheLine> wc_bytes{};
  uint64_t wc_byte_mask = 0;
};

class PcieFabric {
 public:
  PcieFabric(Simulator& sim, LatencyModel model, int host_cpus);

  Simulator& sim() { return sim_; }
  const LatencyModel& model() const { return model_; }
  SocMemory& soc() { return soc_; }

  // --- Host-side MMIO ---------------------------------------------------
  // Reads return the sampled value and charge the issuing CPU. Under WT a
  // miss installs the whole line; hits cost wt_hit_ns and may legitimately
  // return a stale snapshot (that is the point of the coherence audit).
  uint64_t host_read_word(int cpu, uint64_t addr, PteType pte);
  void host_read(int cpu, uint64_t addr, uint8_t* out, uint64_t len,
                 PteType pte);

  // Posted writes: CPU cost now, SoC visibility after the bus transit.
  // WC stores land in the CPU's combining buffer until a flush trigger
  // (explicit fence, line eviction, or interrupt entry).
  void host_write(int cpu, uint64_t addr, const uint8_t* in, uint64_t len,
                  PteType pte);
  void host_write_word(int cpu, uint64_t addr, uint64_t value, PteType pte);
  void host_fence(int cpu);
  void host_clflush(int cpu, uint64_t line_addr);
  void host_prefetch(int cpu, uint64_t line_addr);
  bool host_line_cached(int cpu, uint64_t line_addr) const;

  // Interrupt-entry software coherence: drain the WC buffer and drop WT
  // lines overlapping [base, base+len).
  void host_interrupt_entry(int cpu, uint64_t base, uint64_t len);

  // --- IPU-side access (coherent on the SoC) ----------------------------
  uint64_t ipu_read_word(int ipu_cpu, uint64_t addr, bool wb_mapped);
  void ipu_read(int ipu_cpu, uint64_t addr, uint8_t* out, uint64_t len,
                bool wb_mapped);
  void ipu_write_word(int ipu_cpu, uint64_t addr, uint64_t value,
                      bool wb_mapped);
  void ipu_write(int ipu_cpu, uint64_t addr, const uint8_t* in, uint64_t len,
                 bool wb_mapped);

  // --- Notification ------------------------------------------------------
  // Charges the sender, then hands the vector to the registered sink at
  // arrival time; the host kernel charges receive overhead when the
  // handler actually starts. Handler body begin == send begin + e2e when
  // the target CPU is free.
  using IrqSink = std::function<void(int cpu, SimTime arrival)>;
  void set_irq_sink(IrqSink sink) { irq_sink_ = std::move(sink); }
  void send_msix(int from_ipu_cpu, int host_cpu_vector);

  // --- DMA ----------------------------------------------------------------
  // Completion at issue + setup + ceil(len/64) * per_cacheline. The
  // destination updates atomically at completion.
  void dma_to_host(int initiator_ipu_cpu, uint64_t soc_addr, uint64_t len,
                   std::function<void(std::vector<uint8_t>, DmaDone)> done);
  void dma_to_soc(int initiator_ipu_cpu, uint64_t soc_addr,
                  std::function<std::vector<uint8_t>()> host_source,
                  uint64_t len, std::function<void(DmaDone)> done);
  SimTime dma_finish_time(SimTime issue, uint64_t len) const;

  // Counters for tests and metrics.
  uint64_t dma_transfers() const { return dma_transfers_; }
  uint64_t msix_sent() const { return msix_sent_; }
  uint64_t wt_misses() const { return wt_misses_; }
  uint64_t wt_hits() const { return wt_hits_; }

  int host_cpus() const { return static_cast<int>(host_.size()); }

 private:
  HostFabricCpu& cpu_state(int cpu);
  void install_line(int cpu, uint64_t line_addr);
  void flush_wc(int cpu, bool charge_cost);
  void check_mapped(uint64_t addr, uint64_t len) const;

  Simulator& sim_;
  LatencyModel model_;
  SocMemory soc_;
  std::vector<HostFabricCpu> host_;
  IrqSink irq_sink_;
  uint64_t dma_transfers_ = 0;
  uint64_t msix_sent_ = 0;
  uint64_t wt_misses_ = 0;
  uint64_t wt_hits_ = 0;
};

}  // namespace wavesim
