// SPDX-License-Identifier: Apache-2.0
//
// Memory-tiering subsystem: an IPU agent running Thompson sampling over
// per-batch Beta posteriors to pick access-bit scan periods and classify
// 256 KiB page batches hot/cold, a host shim that harvests/clears access
// bits and actuates migrations, and a synthetic paged-memory model with a
// hot/cold touch generator.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wavesim/rng.hpp"
#include "wavesim/wave_api.hpp"

namespace wavesim {

constexpr uint32_t kMemtierSubsystem = 0x6d656d74;  // custom-call tag
constexpr uint32_t kOpHarvestAccessBits = 1;
constexpr uint32_t kOpMadvise = 2;

enum class BatchTier : uint8_t { Fast, Slow };

constexpr int kPagesPerBatch = 64;  // 64 x 4 KiB = 256 KiB

struct BetaState {
  double alpha = 1.0;  // Beta(1,1) prior
  double beta = 1.0;
  int period_idx = 0;
  SimTime next_scan_due{0};
};

struct Batch {
  uint32_t id = 0;
  BatchTier tier = BatchTier::Fast;
  uint64_t access_bits = 0;  // one bit per page
  BetaState posterior;
};

struct MemtierConfig {
  uint64_t n_batches = 4096;  // 1 GiB address space at desk scale
  double hot_fraction = 0.20;
  bool zipf = false;  // zipf over the whole space instead of uniform-hot
  double touch_rate_per_sec = 50'000;
  uint64_t touch_batch_interval_ns = 1'000'000;  // generator granularity
  int epochs = 5;
  uint64_t epoch_ns = 38'400'000'000ull;  // 38.4 s
  // Scan-period ladder. 300 ms is deliberately absent: it over-scans at
  // realistic address-space sizes.
  std::vector<uint64_t> ladder_ns = {600'000'000ull, 1'200'000'000ull,
                                     2'400'000'000ull, 4'800'000'000ull,
                                     9'600'000'000ull};
  double theta = 0.5;  // hotness threshold on the epoch draw
  uint64_t fault_penalty_ns = 50'000;  // assumption, configurable
  uint64_t tlb_flush_ns = 1'000;       // shim cost per cleared batch
  int parallelism = 16;

  // Scan-loop duration model, duration = serial + parallel / P at the
  // reference address-space size; desk-scale runs charge proportionally.
  double loop_serial_ms = 320.4;
  double loop_parallel_ms = 697.6;
  uint64_t ref_batches = 409'600;  // ~100 GiB

  std::string trace_path;  // optional "(time_ns, page_id)" records
  uint64_t seed = 1;

  double loop_duration_ms(int p) const {
    return loop_serial_ms + loop_parallel_ms / double(p);
  }
};

struct MemtierStats {
  std::vector<uint64_t> faults_per_epoch;
  std::vector<uint64_t> cleared_per_iteration;
  std::vector<double> fast_fraction_per_epoch;
  double final_fast_fraction = 0;
  uint64_t total_faults = 0;
  uint64_t scans = 0;
  uint64_t migrations = 0;
  double modeled_loop_ms = 0;  // at the reference size and configured P
};

// Self-contained tiering simulation: touch stream + scan ladder + epoch
// migration over the fabric's DMA custom-call path.
class MemtierSystem {
 public:
  MemtierSystem(WaveRuntime& runtime, int enclave_id, MemtierConfig cfg);

  void start();
  // One workload access; FAST hits set the page's access bit, SLOW
  // accesses fault the whole batch back to the fast tier.
  void touch(uint64_t page_id);

  const MemtierStats& stats() const { return stats_; }
  const Batch& batch(uint32_t id) const { return batches_[id]; }
  double fast_fraction() const;

  // Ladder mapping: quantize (1-u) into the five slots. Boundaries mirror
  // the period-doubling ladder so a well-separated posterior pins its
  // batch (hot at the shortest period, cold at the longest).
  static int period_for_draw(double u);

 private:
  void schedule_touches();
  void scan_tick();
  void epoch_boundary();
  double thompson_draw(uint32_t batch_id, uint64_t salt);

  WaveRuntime& runtime_;
  Simulator& sim_;
  int enclave_id_;
  MemtierConfig cfg_;
  AgentLocation agent_{true, 0};
  int shim_cpu_ = 0;

  std::vector<Batch> batches_;
  uint64_t n_hot_pages_ = 0;
  uint64_t epoch_faults_ = 0;
  int epoch_index_ = 0;
  Rng touch_rng_;
  std::vector<std::pair<uint64_t, uint64_t>> trace_;  // (time_ns, page)
  size_t trace_pos_ = 0;
  MemtierStats stats_;
};

}  // namespace wavesim
