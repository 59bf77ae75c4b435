// SPDX-License-Identifier: Apache-2.0

#include "wavesim/fabric.hpp"

#include <algorithm>
#include <cassert>

namespace wavesim {

// ---------------------------------------------------------------- SocMemory

uint64_t SocMemory::alloc(const std::string& name, uint64_t size,
                          int enclave_id) {
  uint64_t base = (bytes_.size() + kCacheLine - 1) & ~(kCacheLine - 1);
  uint64_t end = base + ((size + kCacheLine - 1) & ~(kCacheLine - 1));
  bytes_.resize(end, 0);
  versions_.resize(end / 8, 0);
  regions_.push_back({base, size, name, enclave_id});
  return base;
}

bool SocMemory::mapped(uint64_t addr, uint64_t len) const {
  return addr + len <= bytes_.size() && len > 0;
}

int SocMemory::owner_enclave(uint64_t addr) const {
  for (const auto& r : regions_)
    if (addr >= r.base && addr < r.base + r.size) return r.enclave;
  return -1;
}

void SocMemory::read(uint64_t addr, uint8_t* out, uint64_t len) const {
  if (!mapped(addr, len)) throw UnmappedAddress(addr);
  std::memcpy(out, bytes_.data() + addr, len);
}

void SocMemory::write(uint64_t addr, const uint8_t* in, uint64_t len) {
  if (!mapped(addr, len)) throw UnmappedAddress(addr);
  std::memcpy(bytes_.data() + addr, in, len);
  for (uint64_t w = addr / 8; w <= (addr + len - 1) / 8; ++w) ++versions_[w];
  notify(addr, len);
}

uint64_t SocMemory::read_word(uint64_t addr) const {
  uint64_t v;
  read(addr, reinterpret_cast<uint8_t*>(&v), 8);
  return v;
}

void SocMemory::write_word(uint64_t addr, uint64_t value) {
  write(addr, reinterpret_cast<const uint8_t*>(&value), 8);
}

void SocMemory::notify(uint64_t addr, uint64_t len) {
  for (auto& w : watchers_) {
    if (addr < w.base + w.len && w.base < addr + len) w.obs(addr, len);
  }
}

// --------------------------------------------------------------- PcieFabric

PcieFabric::PcieFabric(Simulator& sim, LatencyModel model, int host_cpus)
    : sim_(sim), model_(std::move(model)), host_(host_cpus) {
  model_.validate();
}

HostFabricCpu& PcieFabric::cpu_state(int cpu) {
  return host_.at(static_cast<size_t>(cpu));
}

void PcieFabric::check_mapped(uint64_t addr, uint64_t len) const {
  if (!soc_.mapped(addr, len)) throw UnmappedAddress(addr);
}

void PcieFabric::install_line(int cpu, uint64_t line_addr) {
  auto& st = cpu_state(cpu);
  HostFabricCpu::Line line;
  line.installed = sim_.now();
  soc_.read(line_addr, line.bytes.data(), kCacheLine);
  st.wt_lines[line_addr] = line;
}

uint64_t PcieFabric::host_read_word(int cpu, uint64_t addr, PteType pte) {
  uint64_t v;
  host_read(cpu, addr, reinterpret_cast<uint8_t*>(&v), 8, pte);
  return v;
}

void PcieFabric::host_read(int cpu, uint64_t addr, uint8_t* out, uint64_t len,
                           PteType pte) {
  check_mapped(addr, len);
  if (pte == PteType::WB) {
    // Coherent host memory endpoint: free and always fresh.
    soc_.read(addr, out, len);
    return;
  }
  auto& st = cpu_state(cpu);
  if (pte == PteType::WT) {
    // Line-granular: a miss pulls the whole line for one read's cost;
    // later words in the line hit.
    uint64_t pos = addr;
    while (pos < addr + len) {
      uint64_t line = pos & ~(kCacheLine - 1);
      auto it = st.wt_lines.find(line);
      if (it == st.wt_lines.end()) {
        sim_.charge(host_cpu(cpu), CostKind::MmioRead, model_.mmio_read_ns);
        ++wt_misses_;
        install_line(cpu, line);
        it = st.wt_lines.find(line);
      } else {
        sim_.charge(host_cpu(cpu), CostKind::MmioRead, model_.wt_hit_ns);
        ++wt_hits_;
      }
      uint64_t take = std::min(addr + len - pos, line + kCacheLine - pos);
      std::memcpy(out + (pos - addr), it->second.bytes.data() + (pos - line),
                  take);
      pos += take;
    }
    return;
  }
  // UC (and WC mappings, whose loads behave like UC): one bus round trip
  // per 64-bit word. A UC access drains the combining buffer first.
  flush_wc(cpu, true);
  uint64_t words = (len + 7) / 8;
  sim_.charge(host_cpu(cpu), CostKind::MmioRead, words * model_.mmio_read_ns);
  soc_.read(addr, out, len);
}

void PcieFabric::host_write(int cpu, uint64_t addr, const uint8_t* in,
                            uint64_t len, PteType pte) {
  check_mapped(addr, len);
  if (pte == PteType::WB) {
    soc_.write(addr, in, len);
    return;
  }
  auto& st = cpu_state(cpu);
  if (pte == PteType::WC) {
    uint64_t pos = addr;
    while (pos < addr + len) {
      uint64_t line = pos & ~(kCacheLine - 1);
      if (st.wc_valid && st.wc_line != line) flush_wc(cpu, true);
      if (!st.wc_valid) {
        st.wc_valid = true;
        st.wc_line = line;
        st.wc_byte_mask = 0;
      }
      uint64_t take = std::min(addr + len - pos, line + kCacheLine - pos);
      for (uint64_t i = 0; i < take; ++i) {
        uint64_t off = pos - line + i;
        st.wc_bytes[off] = in[(pos - addr) + i];
        st.wc_byte_mask |= 1ULL << off;
      }
      sim_.charge(host_cpu(cpu), CostKind::MmioWrite,
                  ((take + 7) / 8) * model_.wc_store_ns);
      pos += take;
    }
    return;
  }
  // UC / WT stores go straight to the bus, one posted write per word.
  // A WT store also updates the local cached copy (write-through).
  uint64_t words = (len + 7) / 8;
  sim_.charge(host_cpu(cpu), CostKind::MmioWrite, words * model_.mmio_write_ns);
  if (pte == PteType::WT) {
    uint64_t line = addr & ~(kCacheLine - 1);
    auto it = st.wt_lines.find(line);
    if (it != st.wt_lines.end() && addr + len <= line + kCacheLine)
      std::memcpy(it->second.bytes.data() + (addr - line), in, len);
  }
  std::vector<uint8_t> bytes(in, in + len);
  sim_.after(model_.mmio_transit_ns, [this, addr, bytes = std::move(bytes)] {
    soc_.write(addr, bytes.data(), bytes.size());
  });
}

void PcieFabric::host_write_word(int cpu, uint64_t addr, uint64_t value,
                                 PteType pte) {
  host_write(cpu, addr, reinterpret_cast<const uint8_t*>(&value), 8, pte);
}

void PcieFabric::flush_wc(int cpu, bool charge_cost) {
  auto& st = cpu_state(cpu);
  if (!st.wc_valid) return;
  st.wc_valid = false;
  if (charge_cost)
    sim_.charge(host_cpu(cpu), CostKind::WcFlush, model_.wc_flush_ns);
  uint64_t line = st.wc_line;
  uint64_t mask = st.wc_byte_mask;
  auto bytes = st.wc_bytes;
  sim_.after(model_.wc_flush_ns + model_.mmio_transit_ns,
             [this, line, mask, bytes] {
               // Apply only the bytes actually stored; runs of written
               // bytes commit contiguously.
               uint64_t i = 0;
               while (i < kCacheLine) {
                 if (!(mask & (1ULL << i))) {
                   ++i;
                   continue;
                 }
                 uint64_t j = i;
                 while (j < kCacheLine && (mask & (1ULL << j))) ++j;
                 soc_.write(line + i, bytes.data() + i, j - i);
                 i = j;
               }
             });
}

void PcieFabric::host_fence(int cpu) { flush_wc(cpu, true); }

void PcieFabric::host_clflush(int cpu, uint64_t line_addr) {
  auto& st = cpu_state(cpu);
  line_addr &= ~(kCacheLine - 1);
  st.wt_lines.erase(line_addr);
  st.prefetch_due.erase(line_addr);
  sim_.charge(host_cpu(cpu), CostKind::Clflush, model_.clflush_ns);
}

void PcieFabric::host_prefetch(int cpu, uint64_t line_addr) {
  line_addr &= ~(kCacheLine - 1);
  check_mapped(line_addr, kCacheLine);
  auto& st = cpu_state(cpu);
  if (st.wt_lines.count(line_addr) || st.prefetch_due.count(line_addr)) return;
  SimTime due = sim_.now() + model_.mmio_read_ns;
  st.prefetch_due[line_addr] = due;
  sim_.schedule(due, [this, cpu, line_addr, due] {
    auto& s = cpu_state(cpu);
    auto it = s.prefetch_due.find(line_addr);
    // A clflush between issue and completion cancels the install.
    if (it == s.prefetch_due.end() || it->second != due) return;
    s.prefetch_due.erase(it);
    install_line(cpu, line_addr);
  });
}

bool PcieFabric::host_line_cached(int cpu, uint64_t line_addr) const {
  const auto& st = host_.at(static_cast<size_t>(cpu));
  return st.wt_lines.count(line_addr & ~(kCacheLine - 1)) > 0;
}

void PcieFabric::host_interrupt_entry(int cpu, uint64_t base, uint64_t len) {
  flush_wc(cpu, true);
  auto& st = cpu_state(cpu);
  uint64_t first = base & ~(kCacheLine - 1);
  for (uint64_t line = first; line < base + len; line += kCacheLine) {
    if (st.wt_lines.erase(line))
      sim_.charge(host_cpu(cpu), CostKind::Clflush, model_.clflush_ns);
    st.prefetch_due.erase(line);
  }
}

uint64_t PcieFabric::ipu_read_word(int cpu, uint64_t addr,
                                   bool wb_mapped) {
  uint64_t v;
  ipu_read(cpu, addr, reinterpret_cast<uint8_t*>(&v), 8, wb_mapped);
  return v;
}

void PcieFabric::ipu_read(int cpu, uint64_t addr, uint8_t* out,
                          uint64_t len, bool wb_mapped) {
  check_mapped(addr, len);
  uint64_t words = (len + 7) / 8;
  uint64_t per = wb_mapped ? model_.ipu_wb_word_ns : model_.ipu_uc_word_ns;
  sim_.charge(ipu_cpu(cpu), CostKind::AgentCompute, words * per);
  soc_.read(addr, out, len);
}

void PcieFabric::ipu_write_word(int cpu, uint64_t addr, uint64_t value,
                                bool wb_mapped) {
  ipu_write(cpu, addr, reinterpret_cast<const uint8_t*>(&value), 8,
            wb_mapped);
}

void PcieFabric::ipu_write(int cpu, uint64_t addr, const uint8_t* in,
                           uint64_t len, bool wb_mapped) {
  check_mapped(addr, len);
  uint64_t words = (len + 7) / 8;
  uint64_t per = wb_mapped ? model_.ipu_wb_word_ns : model_.ipu_uc_word_ns;
  sim_.charge(ipu_cpu(cpu), CostKind::AgentCompute, words * per);
  // SoC-local store: coherent, visible immediately.
  soc_.write(addr, in, len);
}

void PcieFabric::send_msix(int from_ipu_cpu, int host_cpu_vector) {
  if (host_cpu_vector < 0 || host_cpu_vector >= host_cpus())
    throw BadVector(host_cpu_vector);
  sim_.charge(ipu_cpu(from_ipu_cpu), CostKind::MsixSend,
              model_.msix_send_ns);
  ++msix_sent_;
  // Arrival is placed so that an unloaded handler's body begins exactly
  // e2e after send begin: send + transit now, receive charged at start.
  uint64_t delay = model_.msix_send_ns + model_.msix_transit_ns();
  int cpu = host_cpu_vector;
  sim_.after(delay, [this, cpu] {
    if (irq_sink_) irq_sink_(cpu, sim_.now());
  });
}

SimTime PcieFabric::dma_finish_time(SimTime issue, uint64_t len) const {
  uint64_t lines = (len + kCacheLine - 1) / kCacheLine;
  return issue + model_.dma_setup_ns + lines * model_.dma_per_cacheline_ns;
}

void PcieFabric::dma_to_host(
    int initiator_ipu_cpu, uint64_t soc_addr, uint64_t len,
    std::function<void(std::vector<uint8_t>, DmaDone)> done) {
  if (len == 0) throw ZeroLength();
  check_mapped(soc_addr, len);
  sim_.charge(ipu_cpu(initiator_ipu_cpu), CostKind::DmaSetup,
              model_.dma_setup_ns);
  ++dma_transfers_;
  SimTime finish = dma_finish_time(sim_.now(), len);
  sim_.schedule(finish, [this, soc_addr, len, done = std::move(done)] {
    std::vector<uint8_t> bytes(len);
    soc_.read(soc_addr, bytes.data(), len);
    done(std::move(bytes), DmaDone{sim_.now()});
  });
}

void PcieFabric::dma_to_soc(int initiator_ipu_cpu, uint64_t soc_addr,
                            std::function<std::vector<uint8_t>()> host_source,
                            uint64_t len, std::function<void(DmaDone)> done) {
  if (len == 0) throw ZeroLength();
  check_mapped(soc_addr, len);
  sim_.charge(ipu_cpu(initiator_ipu_cpu), CostKind::DmaSetup,
              model_.dma_setup_ns);
  ++dma_transfers_;
  SimTime finish = dma_finish_time(sim_.now(), len);
  sim_.schedule(finish, [this, soc_addr, len, source = std::move(host_source),
                         done = std::move(done)] {
    std::vector<uint8_t> bytes = source();
    bytes.resize(len);
    soc_.write(soc_addr, bytes.data(), len);
    if (done) done(DmaDone{sim_.now()});
  });
}

}  // namespace wavesim
