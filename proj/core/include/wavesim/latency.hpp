// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace wavesim {

// Cost table for the host<->IPU interconnect. The "mount-evans" defaults
// are measured microbenchmark values for MMIO and MSI-X on a PCIe-attached
// IPU; fields the microbenchmarks do not pin (transit, clflush, WC flush,
// DMA engine rates, SoC-local access) are documented assumptions and are
// all configurable.
struct LatencyModel {
  uint64_t mmio_read_ns = 750;    // host 64-bit uncacheable read
  uint64_t mmio_write_ns = 50;    // host 64-bit uncacheable (posted) write
  uint64_t msix_send_ns = 340;    // ioctl + register write on the IPU
  uint64_t msix_receive_ns = 350; // host-side vector entry overhead
  uint64_t msix_e2e_ns = 1600;    // send begin -> handler body begin

  // Assumption: posted-write visibility delay across the bus. Not pinned
  // by the microbenchmarks (writes are unacknowledged).
  uint64_t mmio_transit_ns = 500;

  uint64_t dma_setup_ns = 1500;        // several MMIO accesses to kick the engine
  uint64_t dma_per_cacheline_ns = 10;  // ~6.4 GB/s sustained
  uint64_t clflush_ns = 100;           // assumption, per flushed line
  uint64_t wc_flush_ns = 50;           // drain one write-combining line
  uint64_t wc_store_ns = 5;            // store into the WC buffer
  uint64_t wt_hit_ns = 0;              // cached read of a WT line

  // SoC-local access cost per 64-bit word for an agent whose MMIO mapping
  // uses UC vs WB page table entries.
  uint64_t ipu_uc_word_ns = 75;
  uint64_t ipu_wb_word_ns = 2;

  std::string profile_name = "mount-evans";

  // Remainder of the MSI-X end-to-end window after subtracting both CPU
  // overheads: pure bus transit.
  uint64_t msix_transit_ns() const {
    return msix_e2e_ns - msix_send_ns - msix_receive_ns;
  }

  void validate() const {
    if (msix_e2e_ns < msix_send_ns + msix_receive_ns)
      throw std::invalid_argument(
          "latency model: msix_e2e_ns must cover send + receive overheads");
  }
};

// Named presets selectable from the experiment config.
//   mount-evans : PCIe-attached IPU defaults above
//   upi         : coherent-interconnect emulation (loads/stores at
//                 coherent cost, no software coherence flushes)
//   onhost      : all fabric costs zero; used for the on-host baselines
LatencyModel latency_profile(const std::string& name);

}  // namespace wavesim
