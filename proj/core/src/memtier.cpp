// SPDX-License-Identifier: Apache-2.0

#include "wavesim/memtier.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "wavesim/rng.hpp"

namespace wavesim {

MemtierSystem::MemtierSystem(WaveRuntime& runtime, int enclave_id,
                             MemtierConfig cfg)
    : runtime_(runtime),
      sim_(runtime.fabric().sim()),
      enclave_id_(enclave_id),
      cfg_(cfg),
      touch_rng_(derived_rng(cfg.seed, 0x746f7563)) {
  batches_.resize(cfg_.n_batches);
  for (uint32_t i = 0; i < cfg_.n_batches; ++i) batches_[i].id = i;
  n_hot_pages_ = uint64_t(double(cfg_.n_batches) * cfg_.hot_fraction) *
                 kPagesPerBatch;
  shim_cpu_ = runtime_.enclave(enclave_id_).spec().host_cpus.front();
  stats_.modeled_loop_ms = cfg_.loop_duration_ms(cfg_.parallelism);

  if (!cfg_.trace_path.empty()) {
    std::ifstream in(cfg_.trace_path);
    if (!in) throw SimError("cannot open trace: " + cfg_.trace_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      uint64_t t, page;
      char sep;
      if (ls >> t) {
        ls >> sep >> page;
        trace_.push_back({t, page});
      }
    }
    std::sort(trace_.begin(), trace_.end());
  }

  // Host shim: harvest-and-clear access bits, and apply madvise plans.
  runtime_.register_custom_handler(
      kMemtierSubsystem, kOpHarvestAccessBits, shim_cpu_,
      [this](std::span<const uint8_t> args) {
        size_t n = args.size() / 4;
        std::vector<uint8_t> reply(n * 8);
        uint64_t flushed = 0;
        for (size_t i = 0; i < n; ++i) {
          uint32_t id;
          std::memcpy(&id, args.data() + i * 4, 4);
          uint64_t bits = batches_.at(id).access_bits;
          std::memcpy(reply.data() + i * 8, &bits, 8);
          if (bits) {
            batches_[id].access_bits = 0;
            ++flushed;
          }
        }
        // Clearing mapped bits costs the shim a TLB flush per batch.
        sim_.charge(host_cpu(shim_cpu_), CostKind::KernelWork,
                    flushed * cfg_.tlb_flush_ns);
        return reply;
      });
  runtime_.register_custom_handler(
      kMemtierSubsystem, kOpMadvise, shim_cpu_,
      [this](std::span<const uint8_t> args) {
        // Plan: (batch id, tier) pairs; the shim actuates migrations.
        size_t n = args.size() / 5;
        for (size_t i = 0; i < n; ++i) {
          uint32_t id;
          std::memcpy(&id, args.data() + i * 5, 4);
          BatchTier t = static_cast<BatchTier>(args[i * 5 + 4]);
          batches_.at(id).tier = t;
        }
        stats_.migrations += n;
        return std::vector<uint8_t>{};
      });
}

int MemtierSystem::period_for_draw(double u) {
  double cold = 1.0 - u;
  if (cold < 0.5) return 0;
  if (cold < 0.625) return 1;
  if (cold < 0.75) return 2;
  if (cold < 0.875) return 3;
  return 4;
}

double MemtierSystem::thompson_draw(uint32_t batch_id, uint64_t salt) {
  // Counter-based stream: each (batch, salt) pair draws independently, so
  // scan order never perturbs other batches' randomness.
  Rng rng = derived_rng(cfg_.seed ^ (uint64_t(batch_id) * 0x9e3779b9ULL),
                        salt);
  return rng.beta(batches_[batch_id].posterior.alpha,
                  batches_[batch_id].posterior.beta);
}

double MemtierSystem::fast_fraction() const {
  uint64_t fast = 0;
  for (const auto& b : batches_)
    if (b.tier == BatchTier::Fast) ++fast;
  return double(fast) / double(batches_.size());
}

void MemtierSystem::touch(uint64_t page_id) {
  uint32_t bid = uint32_t(page_id / kPagesPerBatch);
  Batch& b = batches_.at(bid);
  if (b.tier == BatchTier::Slow) {
    // Fault: the whole batch comes back to the fast tier; the touching
    // thread eats the penalty.
    ++epoch_faults_;
    ++stats_.total_faults;
    sim_.charge(host_cpu(shim_cpu_), CostKind::FaultStall,
                cfg_.fault_penalty_ns);
    b.tier = BatchTier::Fast;
  }
  b.access_bits |= 1ULL << (page_id % kPagesPerBatch);
}

void MemtierSystem::schedule_touches() {
  sim_.after(cfg_.touch_batch_interval_ns, [this] {
    if (!trace_.empty()) {
      while (trace_pos_ < trace_.size() &&
             trace_[trace_pos_].first <= sim_.now().ns) {
        touch(trace_[trace_pos_].second);
        ++trace_pos_;
      }
    } else {
      double expected = cfg_.touch_rate_per_sec *
                        double(cfg_.touch_batch_interval_ns) * 1e-9;
      uint64_t n = uint64_t(expected);
      if (touch_rng_.next_double() < expected - double(n)) ++n;
      uint64_t total_pages = cfg_.n_batches * kPagesPerBatch;
      for (uint64_t i = 0; i < n; ++i) {
        uint64_t page;
        if (cfg_.zipf) {
          double u = touch_rng_.next_double_open();
          page = std::min<uint64_t>(
              total_pages - 1,
              uint64_t(std::pow(u, 3.0) * double(total_pages)));
        } else {
          page = touch_rng_.next_below(std::max<uint64_t>(n_hot_pages_, 1));
        }
        touch(page);
      }
    }
    schedule_touches();
  });
}

void MemtierSystem::scan_tick() {
  // Batches whose ladder period expired get scanned this iteration.
  std::vector<uint32_t> due;
  for (auto& b : batches_)
    if (b.posterior.next_scan_due <= sim_.now()) due.push_back(b.id);

  if (!due.empty()) {
    std::vector<uint8_t> args(due.size() * 4);
    for (size_t i = 0; i < due.size(); ++i)
      std::memcpy(args.data() + i * 4, &due[i], 4);
    CustomCall call{kMemtierSubsystem, kOpHarvestAccessBits, std::move(args)};
    uint64_t scan_no = stats_.scans;
    runtime_.custom_call(
        enclave_id_, agent_, call, CallTransport::Dma,
        [this, due, scan_no](std::vector<uint8_t> reply) {
          uint64_t cleared = 0;
          for (size_t i = 0; i < due.size(); ++i) {
            uint64_t bits = 0;
            if (reply.size() >= (i + 1) * 8)
              std::memcpy(&bits, reply.data() + i * 8, 8);
            Batch& b = batches_[due[i]];
            if (bits) {
              b.posterior.alpha += 1;
              cleared += std::popcount(bits);
            } else {
              b.posterior.beta += 1;
            }
            double u = thompson_draw(b.id, 0x5343414eull ^ (scan_no << 8));
            b.posterior.period_idx = period_for_draw(u);
            b.posterior.next_scan_due =
                sim_.now() + cfg_.ladder_ns[b.posterior.period_idx];
          }
          stats_.cleared_per_iteration.push_back(cleared);
          // Iteration wall cost: the fitted loop-duration model, prorated
          // to the number of batches actually scanned.
          double frac = double(due.size()) / double(cfg_.ref_batches);
          double ms = cfg_.loop_duration_ms(cfg_.parallelism) * frac;
          sim_.charge(ipu_cpu(agent_.cpu), CostKind::AgentCompute,
                      uint64_t(ms * 1e6));
        });
    ++stats_.scans;
  }
  sim_.after(cfg_.ladder_ns.front(), [this] { scan_tick(); });
}

void MemtierSystem::epoch_boundary() {
  stats_.faults_per_epoch.push_back(epoch_faults_);
  epoch_faults_ = 0;
  stats_.fast_fraction_per_epoch.push_back(fast_fraction());
  ++epoch_index_;

  // Fresh Thompson draw per batch decides the tier for the next epoch.
  std::vector<uint8_t> plan;
  for (auto& b : batches_) {
    double u = thompson_draw(b.id, 0x45504f43ull + uint64_t(epoch_index_));
    BatchTier want = u >= cfg_.theta ? BatchTier::Fast : BatchTier::Slow;
    if (want != b.tier) {
      size_t at = plan.size();
      plan.resize(at + 5);
      std::memcpy(plan.data() + at, &b.id, 4);
      plan[at + 4] = static_cast<uint8_t>(want);
    }
  }
  if (!plan.empty()) {
    CustomCall call{kMemtierSubsystem, kOpMadvise, std::move(plan)};
    runtime_.custom_call(enclave_id_, agent_, call, CallTransport::Dma,
                         [](std::vector<uint8_t>) {});
  }
  if (epoch_index_ < cfg_.epochs)
    sim_.after(cfg_.epoch_ns, [this] { epoch_boundary(); });
}

void MemtierSystem::start() {
  schedule_touches();
  sim_.after(cfg_.ladder_ns.front(), [this] { scan_tick(); });
  sim_.after(cfg_.epoch_ns, [this] { epoch_boundary(); });
}

}  // namespace wavesim
