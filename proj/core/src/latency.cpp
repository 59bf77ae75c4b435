// SPDX-License-Identifier: Apache-2.0

#include "wavesim/latency.hpp"

namespace wavesim {

LatencyModel latency_profile(const std::string& name) {
  LatencyModel m;
  if (name == "mount-evans") {
    m.profile_name = name;
    return m;
  }
  if (name == "upi") {
    // Coherent loads/stores instead of PCIe MMIO. Notification stays
    // interrupt-based; software coherence (clflush, WC drains) vanishes.
    m.mmio_read_ns = 100;
    m.mmio_write_ns = 20;
    m.mmio_transit_ns = 100;
    m.clflush_ns = 0;
    m.wc_flush_ns = 0;
    m.wc_store_ns = 5;
    m.ipu_uc_word_ns = 75;
    m.profile_name = name;
    return m;
  }
  if (name == "onhost") {
    m.mmio_read_ns = 0;
    m.mmio_write_ns = 0;
    m.msix_send_ns = 0;
    m.msix_receive_ns = 0;
    m.msix_e2e_ns = 0;
    m.mmio_transit_ns = 0;
    m.dma_setup_ns = 0;
    m.dma_per_cacheline_ns = 0;
    m.clflush_ns = 0;
    m.wc_flush_ns = 0;
    m.wc_store_ns = 0;
    m.wt_hit_ns = 0;
    m.ipu_uc_word_ns = 0;
    m.ipu_wb_word_ns = 0;
    m.profile_name = name;
    return m;
  }
  throw std::invalid_argument("unknown latency profile: " + name);
}

}  // namespace wavesim
