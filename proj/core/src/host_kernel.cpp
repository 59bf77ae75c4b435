// SPDX-License-Identifier: Apache-2.0

#include "wavesim/host_kernel.hpp"

#include <algorithm>
#include <cassert>
#include <cstdio>
#include <cstring>
#include <unordered_set>

namespace wavesim {

const char* kernel_event_name(KernelEventKind k) {
  switch (k) {
    case KernelEventKind::Created: return "CREATED";
    case KernelEventKind::Wakeup: return "WAKEUP";
    case KernelEventKind::Blocked: return "BLOCKED";
    case KernelEventKind::Yield: return "YIELD";
    case KernelEventKind::PreemptAck: return "PREEMPT_ACK";
    case KernelEventKind::Departed: return "DEPARTED";
  }
  return "?";
}

std::vector<uint8_t> encode_kernel_event(const KernelEventMsg& m) {
  std::vector<uint8_t> out(56, 0);
  auto put = [&](size_t off, uint64_t v) { std::memcpy(out.data() + off, &v, 8); };
  put(0, m.seq);
  put(8, static_cast<uint64_t>(m.kind) |
             (static_cast<uint64_t>(static_cast<uint32_t>(m.cpu)) << 32));
  put(16, m.tid);
  put(24, m.timestamp_ns);
  put(32, m.arg);
  put(40, m.arg2);
  return out;
}

KernelEventMsg decode_kernel_event(std::span<const uint8_t> bytes) {
  if (bytes.size() < 48) throw SimError("kernel event message too short");
  auto get = [&](size_t off) {
    uint64_t v;
    std::memcpy(&v, bytes.data() + off, 8);
    return v;
  };
  KernelEventMsg m;
  m.seq = get(0);
  uint64_t kc = get(8);
  m.kind = static_cast<KernelEventKind>(kc & 0xffffffffu);
  m.cpu = static_cast<int32_t>(kc >> 32);
  m.tid = get(16);
  m.timestamp_ns = get(24);
  m.arg = get(32);
  m.arg2 = get(40);
  return m;
}

HostKernel::HostKernel(WaveRuntime& runtime, HostKernelConfig cfg)
    : runtime_(runtime),
      sim_(runtime.fabric().sim()),
      fabric_(runtime.fabric()),
      cfg_(cfg) {
  cpus_.resize(fabric_.host_cpus());
  switch_begin_.assign(fabric_.host_cpus(), SimTime{0});
  for (int c : enclave().spec().host_cpus) {
    ApiResult r = runtime_.register_irq_handler(
        c, [this](int cpu, SimTime) {
          Cpu& st = cpus_[cpu];
          if (st.state == Cpu::State::Kernel) {
            ++st.pending_irqs;
            return;
          }
          start_handler(cpu);
        });
    if (r != ApiResult::Ok)
      throw BadConfig("irq handler already bound for cpu " + std::to_string(c));
  }
}

uint64_t HostKernel::host_busy(int cpu) const {
  return sim_.ledger().busy_ns(host_cpu(cpu));
}

Thread& HostKernel::tref(uint64_t tid) {
  auto it = threads_.find(tid);
  if (it == threads_.end())
    throw SimError("unknown tid " + std::to_string(tid));
  return it->second;
}

const Thread* HostKernel::thread(uint64_t tid) const {
  auto it = threads_.find(tid);
  return it == threads_.end() ? nullptr : &it->second;
}

std::vector<uint64_t> HostKernel::runnable_tids() const {
  std::vector<uint64_t> out;
  for (const auto& [tid, t] : threads_)
    if (t.state == ThreadState::Runnable) out.push_back(tid);
  std::sort(out.begin(), out.end());
  return out;
}

int HostKernel::total_cpus() const { return static_cast<int>(cpus_.size()); }

bool HostKernel::cpu_idle(int cpu) const {
  return cpus_[cpu].state == Cpu::State::Idle;
}

void HostKernel::send_event_message(KernelEventKind kind, uint64_t tid,
                                    int cpu) {
  const Thread& t = tref(tid);
  KernelEventMsg m;
  m.seq = ++msg_seq_;
  m.kind = kind;
  m.cpu = cpu;
  m.tid = tid;
  m.timestamp_ns = sim_.now().ns;
  m.arg = t.slo_class | (uint64_t(t.kind) << 8) | (uint64_t(t.batch) << 16) |
          (uint64_t(static_cast<uint8_t>(t.state)) << 24);
  m.arg2 = t.total_service_ns;
  int producer = cpu >= 0 ? cpu : cfg_.loadgen_cpu;
  PteType pte = cfg_.tier.onhost ? PteType::WB : cfg_.tier.msg_pte;
  ApiResult r = runtime_.send_message(cfg_.sched_enclave, producer,
                                      encode_kernel_event(m), pte, cpu);
  if (r == ApiResult::Overflow) {
    // Ring overflow crashes the agent; the watchdog fallback takes over.
    kill_agent();
  }
  trace(cpu, kernel_event_name(kind), tid);
}

uint64_t HostKernel::spawn_thread(const SpawnSpec& spec) {
  uint64_t tid = next_tid_++;
  Thread t;
  t.tid = tid;
  t.state = ThreadState::Runnable;
  t.enclave = cfg_.sched_enclave;
  t.slo_class = spec.slo_class;
  t.kind = spec.kind;
  t.batch = spec.batch;
  t.total_service_ns = spec.service_ns;
  t.remaining_ns = spec.service_ns;
  t.arrival = sim_.now();
  t.req_id = spec.req_id;
  threads_[tid] = t;
  ++created_;
  runnable_since_[tid] = sim_.now();
  bool was_fb = fallback_active_;  // kill-on-overflow enqueues all runnables
  send_event_message(KernelEventKind::Created, tid, -1);
  if (was_fb) {
    fallback_queue_.push_back(tid);
    for (int c : enclave().spec().host_cpus)
      if (cpus_[c].state == Cpu::State::Idle) {
        fallback_dispatch(c);
        break;
      }
  }
  return tid;
}

uint64_t HostKernel::spawn_thread_from_host(const SpawnSpec& spec,
                                            int producer_cpu,
                                            size_t queue_idx) {
  uint64_t tid = next_tid_++;
  Thread t;
  t.tid = tid;
  t.state = ThreadState::Runnable;
  t.enclave = cfg_.sched_enclave;
  t.slo_class = spec.slo_class;
  t.kind = spec.kind;
  t.batch = spec.batch;
  t.total_service_ns = spec.service_ns;
  t.remaining_ns = spec.service_ns;
  t.arrival = sim_.now();
  t.req_id = spec.req_id;
  threads_[tid] = t;
  ++created_;
  runnable_since_[tid] = sim_.now();
  KernelEventMsg m;
  m.seq = ++msg_seq_;
  m.kind = KernelEventKind::Created;
  m.cpu = -1;
  m.tid = tid;
  m.timestamp_ns = sim_.now().ns;
  m.arg = t.slo_class | (uint64_t(t.kind) << 8) | (uint64_t(t.batch) << 16);
  m.arg2 = t.total_service_ns;
  MessageQueue& q = enclave().queue(queue_idx);
  PteType pte = cfg_.tier.onhost ? PteType::WB : cfg_.tier.msg_pte;
  q.set_host_producer({producer_cpu, pte});
  bool was_fb = fallback_active_;
  if (q.enqueue(encode_kernel_event(m)) == EnqueueResult::Overflow)
    kill_agent();
  trace(-1, "CREATED", tid);
  if (was_fb) fallback_queue_.push_back(tid);
  return tid;
}

uint64_t HostKernel::spawn_thread_from_ipu(const SpawnSpec& spec,
                                           IpuEndpoint producer,
                                           size_t queue_idx) {
  uint64_t tid = next_tid_++;
  Thread t;
  t.tid = tid;
  t.state = ThreadState::Runnable;
  t.enclave = cfg_.sched_enclave;
  t.slo_class = spec.slo_class;
  t.kind = spec.kind;
  t.batch = spec.batch;
  t.total_service_ns = spec.service_ns;
  t.remaining_ns = spec.service_ns;
  t.arrival = sim_.now();
  t.req_id = spec.req_id;
  threads_[tid] = t;
  ++created_;
  runnable_since_[tid] = sim_.now();
  KernelEventMsg m;
  m.seq = ++msg_seq_;
  m.kind = KernelEventKind::Created;
  m.cpu = -1;
  m.tid = tid;
  m.timestamp_ns = sim_.now().ns;
  m.arg = t.slo_class | (uint64_t(t.kind) << 8) | (uint64_t(t.batch) << 16);
  m.arg2 = t.total_service_ns;
  MessageQueue& q = enclave().queue(queue_idx);
  q.set_ipu_producer(producer);
  bool was_fb = fallback_active_;
  if (q.enqueue(encode_kernel_event(m)) == EnqueueResult::Overflow)
    kill_agent();
  trace(-1, "CREATED", tid);
  if (was_fb) fallback_queue_.push_back(tid);
  return tid;
}

void HostKernel::wake_thread(uint64_t tid) {
  raise_event(KernelEventKind::Wakeup, tid, -1);
}

void HostKernel::kill_thread(uint64_t tid) {
  Thread& t = tref(tid);
  if (t.state != ThreadState::Runnable)
    throw LifecycleViolation("kill_thread: tid " + std::to_string(tid) +
                             " is not runnable");
  t.state = ThreadState::Departed;
  ++departed_;
  runnable_since_.erase(tid);
  send_event_message(KernelEventKind::Departed, tid, -1);
  threads_.erase(tid);
}

void HostKernel::raise_event(KernelEventKind kind, uint64_t tid, int cpu) {
  Thread& t = tref(tid);
  switch (kind) {
    case KernelEventKind::Wakeup:
      if (t.state != ThreadState::Blocked) {
        ++lifecycle_violations_;
        throw LifecycleViolation("WAKEUP of thread " + std::to_string(tid) +
                                 " in state " +
                                 std::to_string(int(t.state)));
      }
      t.state = ThreadState::Runnable;
      runnable_since_[tid] = sim_.now();
      {
        bool was_fb = fallback_active_;
        send_event_message(kind, tid, cpu);
        if (was_fb) {
          fallback_queue_.push_back(tid);
          for (int c : enclave().spec().host_cpus)
            if (cpus_[c].state == Cpu::State::Idle) {
              fallback_dispatch(c);
              break;
            }
        }
      }
      return;
    case KernelEventKind::Blocked:
    case KernelEventKind::Yield: {
      if (t.state != ThreadState::Running || t.on_cpu < 0) {
        ++lifecycle_violations_;
        throw LifecycleViolation(std::string(kernel_event_name(kind)) +
                                 " of non-running thread " +
                                 std::to_string(tid));
      }
      int c = t.on_cpu;
      Cpu& st = cpus_[c];
      if (st.has_service_end) {
        sim_.cancel(st.service_end);
        st.has_service_end = false;
      }
      uint64_t ran = sim_.now() > t.run_start ? sim_.now() - t.run_start : 0;
      t.remaining_ns -= std::min(t.remaining_ns, ran);
      record_run_span(t, c);
      st.state = Cpu::State::Kernel;
      ++st.generation;
      begin_voluntary_switch(c, kind, tid);
      return;
    }
    case KernelEventKind::Departed:
      kill_thread(tid);
      return;
    default:
      throw SimError("raise_event: unsupported kind");
  }
}

// Voluntary switch critical path:
//   [prefetch] -> block bookkeeping -> event message -> decision read
//   -> (hit) dispatch mechanics -> outcome -> new thread runs
//   -> (miss) idle until MSI-X
void HostKernel::begin_voluntary_switch(int cpu, KernelEventKind reason,
                                        uint64_t tid) {
  Cpu& st = cpus_[cpu];
  uint64_t gen = st.generation;
  switch_begin_[cpu] = sim_.now();
  bool fb = fallback_active_;
  if (!fb && cfg_.tier.prefetch)
    fabric_.host_prefetch(cpu, enclave().txns().slot_line(cpu));
  SwitchStageCosts stages =
      fb ? cfg_.costs.onhost_base : cfg_.costs.stages(cfg_.tier);
  sim_.charge(host_cpu(cpu), CostKind::KernelWork, stages.block_ns);
  sim_.after(stages.block_ns, [this, cpu, gen, reason, tid, fb] {
    Cpu& st = cpus_[cpu];
    if (st.generation != gen) return;
    Thread& t = tref(tid);
    t.on_cpu = -1;
    st.current_tid = 0;
    switch (reason) {
      case KernelEventKind::Blocked:
        t.state = ThreadState::Blocked;
        break;
      case KernelEventKind::Yield:
        t.state = ThreadState::Runnable;
        runnable_since_[tid] = sim_.now();
        break;
      case KernelEventKind::Departed:
        t.state = ThreadState::Departed;
        ++departed_;
        runnable_since_.erase(tid);
        if (on_depart_) on_depart_(t, sim_.now());
        break;
      default:
        break;
    }
    if (fb || fallback_active_) {
      if (reason == KernelEventKind::Yield) fallback_queue_.push_back(tid);
      fallback_dispatch(cpu);
      return;
    }
    uint64_t before = host_busy(cpu);
    send_event_message(reason, tid, cpu);
    uint64_t c_msg = host_busy(cpu) - before;
    // Departed records are dropped once the message is out; counters keep
    // the conservation bookkeeping.
    if (reason == KernelEventKind::Departed) threads_.erase(tid);
    sim_.after(c_msg, [this, cpu, gen] {
      if (cpus_[cpu].generation != gen) return;
      attempt_local_claim(cpu);
    });
  });
}

void HostKernel::attempt_local_claim(int cpu) {
  if (fallback_active_) {
    fallback_dispatch(cpu);
    return;
  }
  PteType pte = cfg_.tier.onhost ? PteType::WB : cfg_.tier.txn_pte;
  uint64_t before = host_busy(cpu);
  auto d = enclave().txns().read_and_claim({cpu, pte}, cpu);
  uint64_t c_read = host_busy(cpu) - before;
  uint64_t gen = cpus_[cpu].generation;
  if (!d) {
    ++prestage_misses_;
    sim_.after(c_read, [this, cpu, gen] {
      if (cpus_[cpu].generation != gen) return;
      enter_idle(cpu);
    });
    return;
  }
  if (d->prestaged) ++prestage_hits_;
  finish_dispatch(cpu, *d, c_read);
}

void HostKernel::start_handler(int cpu) {
  Cpu& st = cpus_[cpu];
  st.state = Cpu::State::Kernel;
  uint64_t gen = ++st.generation;
  if (st.current_tid != 0) {
    // Interrupt pauses the running thread; it resumes if the vector turns
    // out to be spurious.
    Thread& t = tref(st.current_tid);
    if (st.has_service_end) {
      sim_.cancel(st.service_end);
      st.has_service_end = false;
    }
    uint64_t ran = sim_.now() > t.run_start ? sim_.now() - t.run_start : 0;
    t.remaining_ns -= std::min(t.remaining_ns, ran);
    record_run_span(t, cpu);
    t.run_start = sim_.now();
    st.paused = true;
  }
  uint64_t recv = cfg_.tier.onhost ? 0 : fabric_.model().msix_receive_ns;
  if (recv) sim_.charge(host_cpu(cpu), CostKind::MsixReceive, recv);
  sim_.after(recv, [this, cpu, gen] {
    Cpu& st = cpus_[cpu];
    if (st.generation != gen) return;
    uint64_t before = host_busy(cpu);
    if (!cfg_.tier.onhost) {
      // Software coherence: a notification means a fresh decision; stale
      // cached lines for this CPU's slot must go.
      fabric_.host_interrupt_entry(cpu, enclave().txns().slot_line(cpu),
                                   kCacheLine);
    }
    PteType pte = cfg_.tier.onhost ? PteType::WB : cfg_.tier.txn_pte;
    auto d = enclave().txns().read_and_claim({cpu, pte}, cpu);
    if (d && fallback_active_) {
      // A dead agent's decision is void; fail it and let the fallback
      // policy drive this CPU.
      enclave().txns().set_outcome({cpu, pte}, cpu, TxnState::Failed);
      ++failed_txns_;
      d.reset();
    }
    if (!d) {
      ++spurious_msix_;
      uint64_t c = host_busy(cpu) - before;
      sim_.after(c, [this, cpu, gen] {
        Cpu& st2 = cpus_[cpu];
        if (st2.generation != gen) return;
        if (st2.paused) {
          st2.paused = false;
          Thread& t = tref(st2.current_tid);
          st2.state = Cpu::State::Running;
          t.run_start = sim_.now();
          uint64_t g2 = st2.generation;
          if (!t.batch) {
            st2.service_end = sim_.after(
                t.remaining_ns, [this, cpu, g2] { service_done(cpu, g2); });
            st2.has_service_end = true;
          } else {
            st2.state = Cpu::State::Running;
          }
        } else {
          enter_idle(cpu);
        }
      });
      return;
    }
    if (st.paused) {
      // Directed preemption: ack the displaced thread back to the agent.
      Thread& prev = tref(st.current_tid);
      prev.state = ThreadState::Runnable;
      prev.on_cpu = -1;
      runnable_since_[prev.tid] = sim_.now();
      ++preemptions_;
      st.paused = false;
      st.current_tid = 0;
      send_event_message(KernelEventKind::PreemptAck, prev.tid, cpu);
    }
    finish_dispatch(cpu, *d, host_busy(cpu) - before);
  });
}

void HostKernel::finish_dispatch(int cpu, const Decision& d,
                                 uint64_t pre_cost) {
  Cpu& st = cpus_[cpu];
  uint64_t gen = st.generation;
  PteType pte = cfg_.tier.onhost ? PteType::WB : cfg_.tier.txn_pte;
  auto it = threads_.find(d.tid);
  if (it == threads_.end() || it->second.state != ThreadState::Runnable) {
    // Decision target is gone (departed while staged): fail the txn so the
    // agent reschedules.
    uint64_t before = host_busy(cpu);
    enclave().txns().set_outcome({cpu, pte}, cpu, TxnState::Failed);
    uint64_t c = host_busy(cpu) - before;
    ++failed_txns_;
    sim_.after(pre_cost + c, [this, cpu, gen] {
      if (cpus_[cpu].generation != gen) return;
      enter_idle(cpu);
    });
    return;
  }
  SwitchStageCosts stages = fallback_active_
                                ? cfg_.costs.onhost_base
                                : cfg_.costs.stages(cfg_.tier);
  sim_.charge(host_cpu(cpu), CostKind::KernelWork, stages.dispatch_ns);
  sim_.after(pre_cost + stages.dispatch_ns, [this, cpu, gen, d, pte] {
    Cpu& st = cpus_[cpu];
    if (st.generation != gen) return;
    uint64_t before = host_busy(cpu);
    enclave().txns().set_outcome({cpu, pte}, cpu, TxnState::Complete);
    uint64_t c = host_busy(cpu) - before;
    ++switches_;
    sim_.after(c, [this, cpu, gen, d] {
      if (cpus_[cpu].generation != gen) return;
      start_running(cpu, d.tid);
    });
  });
}

void HostKernel::start_running(int cpu, uint64_t tid) {
  Cpu& st = cpus_[cpu];
  Thread& t = tref(tid);
  if (t.state != ThreadState::Runnable)
    throw InvariantViolation(
        "dispatch of non-runnable tid " + std::to_string(tid) + " state=" +
        std::to_string(int(t.state)) + " on_cpu=" + std::to_string(t.on_cpu) +
        " to cpu " + std::to_string(cpu));
  if (switch_begin_[cpu].ns != 0) {
    if (switch_spans_.size() < 100'000)
      switch_spans_.push_back(sim_.now() - switch_begin_[cpu]);
    switch_begin_[cpu] = SimTime{0};
  }
  auto ws = runnable_since_.find(tid);
  if (ws != runnable_since_.end()) {
    max_runnable_wait_ = std::max(max_runnable_wait_, sim_.now() - ws->second);
    runnable_since_.erase(ws);
  }
  t.state = ThreadState::Running;
  t.on_cpu = cpu;
  st.current_tid = tid;
  st.state = Cpu::State::Running;
  uint64_t stall = 0;
  if (payload_hook_ && !t.payload_read_done) {
    stall = payload_hook_(cpu, t);
    t.payload_read_done = true;
  }
  t.run_start = sim_.now() + stall;
  trace(cpu, "RUN", tid);
  if (!t.batch) {
    uint64_t gen = st.generation;
    st.service_end = sim_.after(stall + t.remaining_ns,
                                [this, cpu, gen] { service_done(cpu, gen); });
    st.has_service_end = true;
  }
  drain_pending_irq(cpu);
}

void HostKernel::service_done(int cpu, uint64_t generation) {
  Cpu& st = cpus_[cpu];
  if (st.generation != generation) return;
  st.has_service_end = false;
  Thread& t = tref(st.current_tid);
  t.remaining_ns = 0;
  record_run_span(t, cpu);
  st.state = Cpu::State::Kernel;
  ++st.generation;
  uint64_t extra = complete_hook_ ? complete_hook_(cpu, t) : 0;
  uint64_t tid = t.tid;
  if (extra == 0) {
    begin_voluntary_switch(cpu, KernelEventKind::Departed, tid);
    return;
  }
  uint64_t gen = st.generation;
  sim_.after(extra, [this, cpu, gen, tid] {
    if (cpus_[cpu].generation != gen) return;
    begin_voluntary_switch(cpu, KernelEventKind::Departed, tid);
  });
}

void HostKernel::enter_idle(int cpu) {
  Cpu& st = cpus_[cpu];
  st.state = Cpu::State::Idle;
  st.current_tid = 0;
  trace(cpu, "IDLE", 0);
  if (fallback_active_ && !fallback_queue_.empty()) {
    fallback_dispatch(cpu);
    return;
  }
  drain_pending_irq(cpu);
}

void HostKernel::drain_pending_irq(int cpu) {
  Cpu& st = cpus_[cpu];
  if (st.pending_irqs > 0 && st.state != Cpu::State::Kernel) {
    --st.pending_irqs;
    start_handler(cpu);
  }
}

void HostKernel::record_run_span(Thread& t, int cpu) {
  if (sim_.now() < t.run_start) return;
  uint64_t span = sim_.now() - t.run_start;
  if (span == 0) return;
  sim_.charge(host_cpu(cpu), CostKind::Service, span);
  run_ns_total_ += span;
  if (t.batch) {
    run_ns_batch_ += span;
    return;  // batch cores are reclaim-driven, not slice-audited
  }
  max_run_span_ = std::max(max_run_span_, span);
  if (cfg_.run_span_bound_ns && span > cfg_.run_span_bound_ns)
    ++span_violations_;
}

void HostKernel::accumulate_current_runs() {
  for (int c = 0; c < total_cpus(); ++c) {
    Cpu& st = cpus_[c];
    if (st.state != Cpu::State::Running || st.current_tid == 0) continue;
    Thread& t = tref(st.current_tid);
    record_run_span(t, c);
    t.run_start = sim_.now();
  }
}

// ------------------------------------------------------------- watchdog

void HostKernel::start_watchdog() {
  if (watchdog_running_) return;
  watchdog_running_ = true;
  uint64_t deadline = enclave().spec().watchdog_deadline_ms * 1'000'000;
  uint64_t period = std::min(cfg_.watchdog_period_ns, deadline / 2);
  // Self-rearming periodic check.
  struct Rearm {
    HostKernel* k;
    uint64_t period;
    void operator()() const {
      k->watchdog_check();
      if (!k->fallback_active_)
        k->sim_.after(period, Rearm{k, period});
    }
  };
  sim_.after(period, Rearm{this, period});
}

bool HostKernel::watchdog_check() {
  Enclave& e = enclave();
  if (!e.agent_alive()) {
    if (!fallback_active_) kill_agent();
    return false;
  }
  uint64_t deadline = e.spec().watchdog_deadline_ms * 1'000'000;
  SimTime last = std::max(e.last_heartbeat(), e.last_decision());
  // A busy agent's bookkeeping can sit slightly ahead of the clock.
  if (last >= sim_.now()) return true;
  if (sim_.now() - last > deadline) {
    kill_agent();
    return false;
  }
  return true;
}

void HostKernel::kill_agent() {
  if (fallback_active_) return;
  Enclave& e = enclave();
  e.set_agent_alive(false);
  fallback_active_ = true;
  ++watchdog_kills_;
  // Absorb the dead agent's in-flight decisions: staged slots are failed
  // outright; claimed slots have a dispatch chain racing to completion,
  // so their targets must not also enter the fallback queue.
  std::unordered_set<uint64_t> in_flight;
  PteType pte = cfg_.tier.onhost ? PteType::WB : cfg_.tier.txn_pte;
  for (int c : e.spec().host_cpus) {
    TxnState st = e.txns().true_state(c);
    if (st == TxnState::Staged) {
      auto d = e.txns().read_and_claim({c, pte}, c);
      if (d) {
        e.txns().set_outcome({c, pte}, c, TxnState::Failed);
        ++failed_txns_;
      }
    } else if (st == TxnState::Claimed || st == TxnState::Complete) {
      // Claimed/complete slots have a dispatch chain racing to run the
      // target; it must not also enter the fallback queue.
      in_flight.insert(e.txns().current_decision(c).tid);
    }
  }
  fallback_queue_.clear();
  for (uint64_t tid : runnable_tids())
    if (!in_flight.count(tid)) fallback_queue_.push_back(tid);
  for (int c : e.spec().host_cpus)
    if (cpus_[c].state == Cpu::State::Idle && !fallback_queue_.empty())
      fallback_dispatch(c);
  sim_.after(cfg_.fallback_tick_ns, [this] { fallback_tick(); });
}

void HostKernel::fallback_dispatch(int cpu) {
  Cpu& st = cpus_[cpu];
  if (fallback_queue_.empty()) {
    st.state = Cpu::State::Idle;
    st.current_tid = 0;
    return;
  }
  uint64_t tid = fallback_queue_.front();
  fallback_queue_.pop_front();
  // Skip stale entries (departed or already running threads).
  auto it = threads_.find(tid);
  if (it == threads_.end() || it->second.state != ThreadState::Runnable) {
    fallback_dispatch(cpu);
    return;
  }
  st.state = Cpu::State::Kernel;
  uint64_t gen = ++st.generation;
  uint64_t cost = cfg_.costs.onhost_base.dispatch_ns;
  sim_.charge(host_cpu(cpu), CostKind::KernelWork, cost);
  sim_.after(cost, [this, cpu, gen, tid] {
    if (cpus_[cpu].generation != gen) return;
    ++switches_;
    start_running(cpu, tid);
  });
}

void HostKernel::fallback_tick() {
  if (!fallback_active_) return;
  // Round-robin rotation: every running thread goes to the tail, then the
  // queue refills the CPUs.
  for (int c : enclave().spec().host_cpus) {
    Cpu& st = cpus_[c];
    if (st.state != Cpu::State::Running || st.current_tid == 0) continue;
    Thread& t = tref(st.current_tid);
    if (st.has_service_end) {
      sim_.cancel(st.service_end);
      st.has_service_end = false;
    }
    uint64_t ran = sim_.now() > t.run_start ? sim_.now() - t.run_start : 0;
    t.remaining_ns -= std::min(t.remaining_ns, ran);
    record_run_span(t, c);
    t.state = ThreadState::Runnable;
    t.on_cpu = -1;
    runnable_since_[t.tid] = sim_.now();
    fallback_queue_.push_back(t.tid);
    st.current_tid = 0;
    st.state = Cpu::State::Idle;
    ++st.generation;
    ++preemptions_;
  }
  for (int c : enclave().spec().host_cpus)
    if (cpus_[c].state == Cpu::State::Idle) fallback_dispatch(c);
  sim_.after(cfg_.fallback_tick_ns, [this] { fallback_tick(); });
}

void HostKernel::resync_agent() {
  Enclave& e = enclave();
  fallback_active_ = false;
  e.set_agent_alive(true);
  e.heartbeat(sim_.now());
  // The host thread table is the source of truth: replay it in tid order.
  std::vector<uint64_t> tids;
  for (const auto& [tid, t] : threads_)
    if (t.state != ThreadState::Departed) tids.push_back(tid);
  std::sort(tids.begin(), tids.end());
  for (uint64_t tid : tids) {
    Thread& t = tref(tid);
    KernelEventMsg m;
    m.seq = ++msg_seq_;
    m.kind = KernelEventKind::Created;
    m.cpu = t.on_cpu;
    m.tid = tid;
    m.timestamp_ns = sim_.now().ns;
    m.arg = t.slo_class | (uint64_t(t.kind) << 8) | (uint64_t(t.batch) << 16) |
            (uint64_t(static_cast<uint8_t>(t.state)) << 24);
    m.arg2 = 1;  // resync snapshot marker
    PteType pte = cfg_.tier.onhost ? PteType::WB : cfg_.tier.msg_pte;
    runtime_.send_message(cfg_.sched_enclave, cfg_.loadgen_cpu,
                          encode_kernel_event(m), pte, -1);
  }
}

void HostKernel::notify_cpu_onhost(int cpu) {
  sim_.after(cfg_.costs.onhost_ipi_window_ns, [this, cpu] {
    Cpu& st = cpus_[cpu];
    if (st.state == Cpu::State::Kernel) {
      ++st.pending_irqs;
      return;
    }
    start_handler(cpu);
  });
}

}  // namespace wavesim
