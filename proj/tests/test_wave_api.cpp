// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"
#include "wavesim/wave_api.hpp"

using namespace wavesim;

namespace {
struct WRig {
  Simulator sim;
  PcieFabric fabric;
  WRig() : fabric(sim, latency_profile("mount-evans"), 20) {}

  WaveConfig one_enclave(int cpus) {
    WaveConfig wc;
    EnclaveSpec e;
    e.id = 0;
    for (int i = 0; i < cpus; ++i) e.host_cpus.push_back(i);
    e.queue.capacity = 1024;
    wc.enclaves.push_back(e);
    return wc;
  }
};

std::vector<uint8_t> payload(uint64_t tag) {
  std::vector<uint8_t> e(56, 0);
  std::memcpy(e.data(), &tag, 8);
  return e;
}
}  // namespace

TEST_CASE("minimal config builds one enclave, one queue, one txn region") {
  WRig r;
  WaveRuntime rt(r.fabric, r.one_enclave(1));
  CHECK(rt.enclave_count() == 1);
  CHECK(rt.enclave(0).queue_count() == 1);
  CHECK(rt.enclave(0).txns().true_state(0) == TxnState::Empty);
}

TEST_CASE("overlapping CPU sets across enclaves are rejected") {
  WRig r;
  WaveConfig wc;
  EnclaveSpec a, b;
  a.id = 0;
  a.host_cpus = {0, 1};
  b.id = 1;
  b.host_cpus = {1, 2};
  wc.enclaves = {a, b};
  CHECK_THROWS_AS(WaveRuntime(r.fabric, wc), BadConfig);
}

TEST_CASE("worker-16 config exposes 16 txn slots and one message queue") {
  WRig r;
  WaveRuntime rt(r.fabric, r.one_enclave(16));
  Enclave& e = rt.enclave(0);
  CHECK(e.queue_count() == 1);
  for (int c = 0; c < 16; ++c)
    CHECK(e.txns().true_state(c) == TxnState::Empty);
}

TEST_CASE("send_message rejects events about CPUs outside the enclave") {
  WRig r;
  WaveConfig wc = r.one_enclave(2);
  WaveRuntime rt(r.fabric, wc);
  CHECK(rt.send_message(0, 0, payload(1), PteType::WC, /*subject=*/1) ==
        ApiResult::Ok);
  CHECK(rt.send_message(0, 0, payload(2), PteType::WC, /*subject=*/7) ==
        ApiResult::EnclaveViolation);
}

TEST_CASE("a burst of 1000 messages polls back in order") {
  WRig r;
  WaveRuntime rt(r.fabric, r.one_enclave(2));
  for (uint64_t i = 0; i < 1000; ++i)
    REQUIRE(rt.send_message(0, 0, payload(i), PteType::WC, -1) ==
            ApiResult::Ok);
  r.sim.run_all();
  MessageQueue& q = rt.enclave(0).queue();
  q.set_ipu_consumer({0, true});
  for (uint64_t i = 0; i < 1000; ++i) {
    auto got = q.poll();
    REQUIRE(got.has_value());
    uint64_t tag;
    std::memcpy(&tag, got->data(), 8);
    REQUIRE(tag == i);
  }
}

TEST_CASE("irq handlers: registered fires, duplicate rejected, none drops") {
  WRig r;
  WaveRuntime rt(r.fabric, r.one_enclave(2));
  int fired = 0;
  CHECK(rt.register_irq_handler(0, [&](int, SimTime) { ++fired; }) ==
        ApiResult::Ok);
  CHECK(rt.register_irq_handler(0, [&](int, SimTime) {}) ==
        ApiResult::AlreadyRegistered);
  r.fabric.send_msix(0, 0);
  r.fabric.send_msix(0, 1);  // no handler on cpu 1
  r.sim.run_all();
  CHECK(fired == 1);
  CHECK(rt.dropped_irqs() == 1);
}

TEST_CASE("custom call frames round-trip byte-exactly") {
  CustomCall c;
  c.subsystem_tag = 0x6d656d;  // arbitrary tag
  c.opcode = 42;
  for (int i = 0; i < 37; ++i) c.args.push_back(uint8_t(i * 7));
  auto frame = encode_custom_call(c);
  CustomCall d = decode_custom_call(frame);
  CHECK(d.subsystem_tag == c.subsystem_tag);
  CHECK(d.opcode == c.opcode);
  CHECK(d.args == c.args);
  // Identity on a zero-length argument too.
  CustomCall z;
  z.opcode = 1;
  CHECK(decode_custom_call(encode_custom_call(z)).args.empty());
}

TEST_CASE("custom call reaches the registered shim and replies") {
  WRig r;
  WaveRuntime rt(r.fabric, r.one_enclave(2));
  rt.register_custom_handler(1, 5, /*shim=*/0,
                             [](std::span<const uint8_t> args) {
                               std::vector<uint8_t> reply(args.begin(),
                                                          args.end());
                               std::reverse(reply.begin(), reply.end());
                               return reply;
                             });
  CustomCall c;
  c.subsystem_tag = 1;
  c.opcode = 5;
  c.args = {1, 2, 3};
  std::vector<uint8_t> got;
  CHECK(rt.custom_call(0, AgentLocation{true, 0}, c, CallTransport::Dma,
                       [&](std::vector<uint8_t> rep) { got = rep; }) ==
        ApiResult::Ok);
  r.sim.run_all();
  CHECK(got == std::vector<uint8_t>{3, 2, 1});
  CustomCall unknown;
  unknown.subsystem_tag = 9;
  CHECK(rt.custom_call(0, AgentLocation{true, 0}, unknown,
                       CallTransport::Mmio, nullptr) ==
        ApiResult::UnknownOpcode);
}

TEST_CASE("enclave accesses stay within their enclave (isolation audit)") {
  WRig r;
  WaveConfig wc;
  EnclaveSpec a, b;
  a.id = 0;
  a.host_cpus = {0, 1};
  b.id = 1;
  b.host_cpus = {2, 3};
  wc.enclaves = {a, b};
  WaveRuntime rt(r.fabric, wc);
  rt.send_message(0, 0, payload(1), PteType::WC, 1);
  rt.send_message(1, 2, payload(2), PteType::WC, 3);
  CHECK(rt.enclave(0).foreign_accesses() == 0);
  CHECK(rt.enclave(1).foreign_accesses() == 0);
}
