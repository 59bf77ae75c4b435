// SPDX-License-Identifier: Apache-2.0

#include "wavesim/sched_agents.hpp"

#include <algorithm>
#include <cstdio>

namespace wavesim {

PolicyKind policy_from_name(const std::string& name) {
  if (name == "fifo") return PolicyKind::Fifo;
  if (name == "shinjuku_sq") return PolicyKind::ShinjukuSq;
  if (name == "shinjuku_mq") return PolicyKind::ShinjukuMq;
  if (name == "shinjuku_shenango") return PolicyKind::ShinjukuShenango;
  throw SimError("unknown policy: " + name);
}

const char* policy_name(PolicyKind k) {
  switch (k) {
    case PolicyKind::Fifo: return "fifo";
    case PolicyKind::ShinjukuSq: return "shinjuku_sq";
    case PolicyKind::ShinjukuMq: return "shinjuku_mq";
    case PolicyKind::ShinjukuShenango: return "shinjuku_shenango";
  }
  return "?";
}

SchedAgent::SchedAgent(WaveRuntime& runtime, HostKernel& kernel,
                       int enclave_id, AgentLocation loc, PolicyConfig cfg,
                       SwitchTier tier)
    : runtime_(runtime),
      kernel_(kernel),
      sim_(runtime.fabric().sim()),
      enclave_(runtime.enclave(enclave_id)),
      loc_(loc),
      cfg_(cfg),
      tier_(tier),
      agent_ep_{loc.cpu, tier.agent_wb} {
  for (int c : enclave_.spec().host_cpus) cpus_[c] = CpuModel{};
}

void SchedAgent::start() {
  for (size_t i = 0; i < enclave_.queue_count(); ++i)
    enclave_.queue(i).set_waker([this] { request_wake(sim_.now()); });
  // Outcome words turning COMPLETE/FAILED wake the spinning agent.
  TxnRegion& txns = enclave_.txns();
  runtime_.fabric().soc().watch(
      txns.base(), txns.span(), [this](uint64_t addr, uint64_t) {
        if (addr % kCacheLine != 0) return;
        uint64_t w0 = runtime_.fabric().soc().read_word(addr);
        TxnState st = static_cast<TxnState>(w0 & 0xff);
        if (st == TxnState::Complete || st == TxnState::Failed)
          request_wake(sim_.now());
      });
  enclave_.heartbeat(sim_.now());
  // Liveness heartbeat independent of traffic.
  struct Beat {
    SchedAgent* a;
    void operator()() const {
      if (a->enclave_.agent_alive()) a->enclave_.heartbeat(a->sim_.now());
      a->sim_.after(5'000'000, Beat{a});
    }
  };
  sim_.after(5'000'000, Beat{this});
  request_wake(sim_.now());
}

void SchedAgent::restart() {
  for (auto& q : runq_) q.clear();
  batch_pool_.clear();
  enq_time_.clear();
  info_.clear();
  for (auto& [c, m] : cpus_) m = CpuModel{};
  resync_pending_ = true;
  busy_until_ = sim_.now();
  request_wake(sim_.now());
}

void SchedAgent::request_wake(SimTime at) {
  if (!enclave_.agent_alive() && !resync_pending_) return;
  SimTime t{std::max(at.ns, busy_until_.ns)};
  // The poll loop notices new work at iteration-tick boundaries.
  uint64_t tick = std::max<uint64_t>(cfg_.loop_tick_ns, 1);
  t.ns = ((t.ns + tick - 1) / tick) * tick;
  if (wake_armed_ && armed_at_ <= t) return;
  wake_armed_ = true;
  armed_at_ = t;
  sim_.schedule(t, [this, t] {
    if (!wake_armed_ || armed_at_ != t) return;
    wake_armed_ = false;
    wake();
  });
}

void SchedAgent::enqueue_runnable(uint64_t tid, bool at_tail, SimTime cursor) {
  auto& ti = info_[tid];
  if (ti.batch) {
    batch_pool_.push_back(tid);
    return;
  }
  int qi = queue_index_for(ti.slo);
  if (at_tail)
    runq_[qi].push_back(tid);
  else
    runq_[qi].push_front(tid);
  enq_time_[tid] = cursor;
}

uint64_t SchedAgent::pick_next(SimTime cursor) {
  if (cfg_.kind == PolicyKind::ShinjukuMq) {
    // Strict priority by tighter SLO, with slice-bounded anti-starvation
    // for the loose class.
    if (!runq_[1].empty()) {
      uint64_t head = runq_[1].front();
      auto it = enq_time_.find(head);
      if (it != enq_time_.end() &&
          cursor - it->second > cfg_.mq_starve_bound_ns) {
        runq_[1].pop_front();
        enq_time_.erase(head);
        return head;
      }
    }
    for (auto& q : runq_) {
      if (!q.empty()) {
        uint64_t tid = q.front();
        q.pop_front();
        enq_time_.erase(tid);
        return tid;
      }
    }
    return 0;
  }
  if (!runq_[0].empty()) {
    uint64_t tid = runq_[0].front();
    runq_[0].pop_front();
    enq_time_.erase(tid);
    return tid;
  }
  if (cfg_.kind == PolicyKind::ShinjukuShenango &&
      empty_polls_ >= cfg_.grant_after_empty_polls && !batch_pool_.empty()) {
    // Spare cycles go to batch work after a streak of empty polls.
    uint64_t tid = batch_pool_.front();
    batch_pool_.pop_front();
    ++grants_;
    return tid;
  }
  return 0;
}

void SchedAgent::send_notify(int cpu, SimTime at) {
  if (loc_.on_ipu) {
    int from = loc_.cpu;
    sim_.schedule(at, [this, from, cpu] {
      if (!enclave_.agent_alive()) return;
      std::array<int, 1> c{cpu};
      enclave_.txns().commit({from, tier_.agent_wb}, c, /*notify=*/true);
    });
  } else {
    sim_.charge(host_cpu(loc_.cpu), CostKind::MsixSend,
                scaled(cfg_.onhost_ipi_send_ns));
    sim_.schedule(at, [this, cpu] { kernel_.notify_cpu_onhost(cpu); });
  }
}

void SchedAgent::stage(int cpu, uint64_t tid, bool notify, bool prestaged,
                       SimTime& cursor) {
  CpuModel& m = cpus_[cpu];
  cursor.ns += scaled(decide_cost());
  work_ += scaled(decide_cost());
  Decision d;
  d.kind = DecisionKind::RunThread;
  d.tid = tid;
  d.prestaged = prestaged;
  auto ti = info_.find(tid);
  if (ti != info_.end()) ti->second.on_cpu_pending = true;
  // The slot stores land now (their time is inside the decision budget);
  // only the notification is deferred to the loop cursor.
  TxnOpResult r = enclave_.txns().create(agent_ep_, cpu, d);
  if (r != TxnOpResult::Ok)
    throw InvariantViolation(
        "agent staged tid " + std::to_string(d.tid) + " into busy slot " +
        std::to_string(cpu) + " state " +
        txn_state_name(enclave_.txns().true_state(cpu)) + " holding tid " +
        std::to_string(enclave_.txns().current_decision(cpu).tid));
  m.staged = true;
  m.staged_tid = tid;
  if (cfg_.log_assignments) assignments_.push_back(tid);
  enclave_.record_decision(cursor);
  if (prestaged)
    ++prestages_;
  else
    ++dispatches_;
  if (notify) send_notify(cpu, cursor);
}

bool SchedAgent::drain_outcome(int cpu, SimTime& cursor) {
  TxnState st = enclave_.txns().true_state(cpu);
  if (st != TxnState::Complete && st != TxnState::Failed) return false;
  auto res = enclave_.txns().poll_outcome(agent_ep_, cpu);
  if (!res) return false;
  CpuModel& m = cpus_[cpu];
  uint64_t per_word = tier_.agent_wb
                          ? runtime_.fabric().model().ipu_wb_word_ns
                          : runtime_.fabric().model().ipu_uc_word_ns;
  uint64_t cost = scaled(cfg_.outcome_cost_ns + 2 * per_word);
  work_ += cost;
  cursor.ns += cost;
  auto [outcome, d] = *res;
  if (outcome == TxnState::Complete) {
    if (m.staged && m.staged_tid == d.tid) {
      m.staged = false;
      m.staged_tid = 0;
    }
    // Outcomes can arrive after the thread's own release message; only a
    // still-dispatched thread marks the CPU busy.
    auto ti = info_.find(d.tid);
    if (ti != info_.end() && ti->second.on_cpu_pending) {
      m.running_tid = d.tid;
      m.run_start_est = cursor;
      m.preempt_sent = false;
    } else if (m.running_tid == d.tid) {
      m.running_tid = 0;
    }
  } else {
    // FAILED: the staged thread departed before the claim. Requeue it if
    // still alive by our book, then refill the CPU.
    m.preempt_sent = false;
    if (m.staged && m.staged_tid == d.tid) {
      m.staged = false;
      m.staged_tid = 0;
    }
    if (info_.count(d.tid)) enqueue_runnable(d.tid, false, cursor);
    cpu_released(cpu, cursor);
  }
  return true;
}

void SchedAgent::cpu_released(int cpu, SimTime& cursor) {
  // The CPU just gave up its thread. A pre-staged decision is claimed by
  // the host on its own; we only nudge with a vector if the host
  // demonstrably raced past the stage.
  CpuModel& m = cpus_[cpu];
  m.preempt_sent = false;
  m.running_tid = 0;
  if (m.staged) {
    if (enclave_.txns().true_state(cpu) == TxnState::Staged)
      send_notify(cpu, cursor);
    m.running_tid = m.staged_tid;
    m.run_start_est = cursor;
    m.staged = false;
    m.staged_tid = 0;
    return;
  }
  // A resolved txn may still occupy the slot (its outcome landed before
  // this release message was drained); absorb it first.
  drain_outcome(cpu, cursor);
  if (enclave_.txns().true_state(cpu) != TxnState::Empty) return;
  uint64_t tid = pick_next(cursor);
  if (tid != 0) stage(cpu, tid, /*notify=*/true, /*prestaged=*/false, cursor);
}

void SchedAgent::handle_message(const KernelEventMsg& m, SimTime& cursor) {
  ++messages_seen_;
  bool snapshot = m.arg2 == 1 && m.kind == KernelEventKind::Created;
  if (resync_pending_ && !snapshot) return;  // stale pre-restart traffic
  if (resync_pending_ && snapshot) {
    ThreadInfo ti{static_cast<uint32_t>(m.arg & 0xff),
                  static_cast<uint32_t>((m.arg >> 8) & 0xff),
                  ((m.arg >> 16) & 1) != 0};
    info_[m.tid] = ti;
    auto state = static_cast<ThreadState>((m.arg >> 24) & 0xff);
    if (state == ThreadState::Running && m.cpu >= 0) {
      cpus_[m.cpu].running_tid = m.tid;
      cpus_[m.cpu].run_start_est = cursor;
    } else if (state == ThreadState::Runnable) {
      enqueue_runnable(m.tid, true, cursor);
    }
    return;
  }

  switch (m.kind) {
    case KernelEventKind::Created: {
      ThreadInfo ti{static_cast<uint32_t>(m.arg & 0xff),
                    static_cast<uint32_t>((m.arg >> 8) & 0xff),
                    ((m.arg >> 16) & 1) != 0};
      info_[m.tid] = ti;
      enqueue_runnable(m.tid, true, cursor);
      break;
    }
    case KernelEventKind::Wakeup:
      enqueue_runnable(m.tid, true, cursor);
      break;
    case KernelEventKind::Blocked:
    case KernelEventKind::Departed:
      if (m.kind == KernelEventKind::Departed) {
        for (auto& q : runq_) {
          auto it = std::find(q.begin(), q.end(), m.tid);
          if (it != q.end()) q.erase(it);
        }
        enq_time_.erase(m.tid);
        info_.erase(m.tid);
      } else if (auto it = info_.find(m.tid); it != info_.end()) {
        it->second.on_cpu_pending = false;
      }
      if (m.cpu >= 0) cpu_released(m.cpu, cursor);
      break;
    case KernelEventKind::Yield:
      if (auto it = info_.find(m.tid); it != info_.end())
        it->second.on_cpu_pending = false;
      enqueue_runnable(m.tid, true, cursor);
      if (m.cpu >= 0) cpu_released(m.cpu, cursor);
      break;
    case KernelEventKind::PreemptAck:
      if (auto it = info_.find(m.tid); it != info_.end())
        it->second.on_cpu_pending = false;
      enqueue_runnable(m.tid, true, cursor);
      if (m.cpu >= 0) cpus_[m.cpu].preempt_sent = false;
      break;
  }
}

void SchedAgent::reclaim_for_latency(SimTime& cursor) {
  // Instant reclaim: a batch thread loses its core as soon as latency
  // work shows up and no other core is coming free.
  while (!runq_[0].empty()) {
    int victim = -1;
    for (auto& [cpu, m] : cpus_) {
      if (m.running_tid == 0 || m.preempt_sent || m.staged) continue;
      auto it = info_.find(m.running_tid);
      if (it != info_.end() && it->second.batch) {
        victim = cpu;
        break;
      }
    }
    if (victim < 0) return;
    if (enclave_.txns().true_state(victim) != TxnState::Empty) return;
    uint64_t tid = pick_next(cursor);
    if (tid == 0) return;
    stage(victim, tid, /*notify=*/true, /*prestaged=*/false, cursor);
    cpus_[victim].preempt_sent = true;
    ++preemptions_sent_;
  }
}

void SchedAgent::slice_checks(SimTime& cursor) {
  if (!preemptive()) return;
  for (auto& [cpu, m] : cpus_) {
    if (m.running_tid == 0 || m.preempt_sent) continue;
    auto it = info_.find(m.running_tid);
    if (it != info_.end() && it->second.batch) continue;  // reclaim-driven
    if (cursor - m.run_start_est < cfg_.slice_ns) continue;
    if (m.staged) {
      // The pre-staged decision doubles as the preemption target.
      send_notify(cpu, cursor);
      m.preempt_sent = true;
      ++preemptions_sent_;
      continue;
    }
    if (enclave_.txns().true_state(cpu) != TxnState::Empty) continue;
    uint64_t tid = pick_next(cursor);
    if (tid == 0) continue;  // nothing to rotate to
    stage(cpu, tid, /*notify=*/true, /*prestaged=*/false, cursor);
    m.preempt_sent = true;
    ++preemptions_sent_;
  }
}

void SchedAgent::dispatch_phase(SimTime& cursor) {
  // Idle CPUs first, lowest id wins; then pre-stage refills.
  for (auto& [cpu, m] : cpus_) {
    if (m.running_tid == 0 && !m.staged &&
        enclave_.txns().true_state(cpu) == TxnState::Empty) {
      uint64_t tid = pick_next(cursor);
      if (tid == 0) break;
      stage(cpu, tid, /*notify=*/true, /*prestaged=*/false, cursor);
    }
  }
  if (!tier_.prestage) return;
  for (auto& [cpu, m] : cpus_) {
    if (m.running_tid != 0 && !m.staged &&
        enclave_.txns().true_state(cpu) == TxnState::Empty) {
      auto rit = info_.find(m.running_tid);
      if (rit != info_.end() && rit->second.batch) continue;
      uint64_t tid = pick_next(cursor);
      if (tid == 0) break;
      stage(cpu, tid, /*notify=*/false, /*prestaged=*/true, cursor);
    }
  }
}

void SchedAgent::wake() {
  if (!enclave_.agent_alive() && !resync_pending_) return;
  ++wakes_;
  SimTime cursor{std::max(sim_.now().ns, busy_until_.ns)};
  work_ = 0;
  enclave_.heartbeat(cursor);

  CpuId self_id = loc_.on_ipu ? ipu_cpu(loc_.cpu) : host_cpu(loc_.cpu);
  for (size_t qi = 0; qi < enclave_.queue_count(); ++qi) {
    MessageQueue& q = enclave_.queue(qi);
    while (q.consumable()) {
      uint64_t before = sim_.ledger().busy_ns(self_id);
      auto bytes = q.poll();
      uint64_t c_poll = sim_.ledger().busy_ns(self_id) - before;
      if (!bytes) break;
      uint64_t cost =
          c_poll + scaled(cfg_.msg_cost_ns +
                          (loc_.on_ipu ? 0 : cfg_.onhost_msg_penalty_ns));
      work_ += cost - c_poll;  // fabric already charged the poll itself
      cursor.ns += cost;
      handle_message(decode_kernel_event(*bytes), cursor);
    }
  }
  if (resync_pending_ && enclave_.agent_alive()) resync_pending_ = false;

  // Outcome scan over slots the host resolved.
  for (auto& [cpu, m] : cpus_) {
    TxnState st = enclave_.txns().true_state(cpu);
    if (st != TxnState::Complete && st != TxnState::Failed) continue;
    auto res = enclave_.txns().poll_outcome(agent_ep_, cpu);
    if (!res) continue;
    uint64_t per_word =
        tier_.agent_wb ? runtime_.fabric().model().ipu_wb_word_ns
                       : runtime_.fabric().model().ipu_uc_word_ns;
    uint64_t cost = scaled(cfg_.outcome_cost_ns + 2 * per_word);
    work_ += cost;
    cursor.ns += cost;
    auto [outcome, d] = *res;
    if (outcome == TxnState::Complete) {
      if (m.staged && m.staged_tid == d.tid) {
        m.staged = false;
        m.staged_tid = 0;
      }
      // Outcomes can arrive after the thread's own release message; only
      // a still-dispatched thread marks the CPU busy.
      auto ti = info_.find(d.tid);
      if (ti != info_.end() && ti->second.on_cpu_pending) {
        m.running_tid = d.tid;
        m.run_start_est = cursor;
        m.preempt_sent = false;
      } else if (m.running_tid == d.tid) {
        m.running_tid = 0;
      }
    } else {
      // FAILED: the staged thread departed before the claim. Requeue it if
      // it is still alive by our book, then refill the CPU.
      m.preempt_sent = false;
      if (m.staged && m.staged_tid == d.tid) {
        m.staged = false;
        m.staged_tid = 0;
      }
      if (info_.count(d.tid)) enqueue_runnable(d.tid, false, cursor);
      cpu_released(cpu, cursor);
    }
  }

  if (cfg_.kind == PolicyKind::ShinjukuShenango) {
    if (runq_[0].empty())
      ++empty_polls_;
    else
      empty_polls_ = 0;
    reclaim_for_latency(cursor);
  }

  slice_checks(cursor);
  dispatch_phase(cursor);

  if (work_) sim_.charge(self_id, CostKind::AgentCompute, work_);
  busy_until_ = cursor;

  // Re-arm: pending messages, or the next slice deadline.
  bool more = false;
  for (size_t qi = 0; qi < enclave_.queue_count() && !more; ++qi)
    more = enclave_.queue(qi).consumable();
  if (cfg_.kind == PolicyKind::ShinjukuShenango && !batch_pool_.empty() &&
      empty_polls_ < cfg_.grant_after_empty_polls)
    more = true;  // keep polling toward the grant threshold
  if (more) {
    request_wake(cursor);
  } else if (preemptive()) {
    SimTime next{UINT64_MAX};
    for (auto& [cpu, m] : cpus_) {
      if (m.running_tid == 0 || m.preempt_sent) continue;
      auto it = info_.find(m.running_tid);
      if (it != info_.end() && it->second.batch) continue;
      uint64_t deadline = m.run_start_est.ns + cfg_.slice_ns;
      // Already-due slices were handled by this pass (or had nothing to
      // rotate to); they re-arm on the next message wake.
      if (deadline <= cursor.ns) continue;
      next.ns = std::min(next.ns, deadline);
    }
    if (next.ns != UINT64_MAX) request_wake(next);
  }
}

std::vector<uint64_t> SchedAgent::runqueue_snapshot() const {
  std::vector<uint64_t> out;
  for (const auto& q : runq_) out.insert(out.end(), q.begin(), q.end());
  out.insert(out.end(), batch_pool_.begin(), batch_pool_.end());
  return out;
}

}  // namespace wavesim
