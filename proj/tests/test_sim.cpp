// SPDX-License-Identifier: Apache-2.0

#include <algorithm>

#include "doctest.h"
#include "wavesim/rng.hpp"
#include "wavesim/sim.hpp"

using namespace wavesim;

TEST_CASE("fresh simulator reads time zero") {
  Simulator sim;
  CHECK(sim.now().ns == 0);
}

TEST_CASE("clock advances to the fire time of a dispatched event") {
  Simulator sim;
  sim.schedule(SimTime{500}, [] {});
  sim.run_all();
  CHECK(sim.now().ns == 500);
}

TEST_CASE("scheduling in the past raises PastEvent") {
  Simulator sim;
  sim.schedule(SimTime{100}, [] {});
  sim.run_all();
  CHECK_THROWS_AS(sim.schedule(SimTime{50}, [] {}), PastEventError);
}

TEST_CASE("same-time events dispatch in insertion order") {
  Simulator sim;
  std::vector<int> order;
  sim.schedule(SimTime{10}, [&] { order.push_back(1); });
  sim.schedule(SimTime{10}, [&] { order.push_back(2); });
  sim.schedule(SimTime{5}, [&] { order.push_back(0); });
  sim.run_all();
  CHECK(order == std::vector<int>{0, 1, 2});
}

TEST_CASE("event scheduled at now dispatches before later events") {
  Simulator sim;
  std::vector<int> order;
  sim.schedule(SimTime{10}, [&] {
    sim.schedule(sim.now(), [&] { order.push_back(1); });
  });
  sim.schedule(SimTime{20}, [&] { order.push_back(2); });
  sim.run_all();
  CHECK(order == std::vector<int>{1, 2});
}

// Oracle: a stable sort of (fire_at, insertion index) must equal the
// dispatch sequence.
TEST_CASE("1e6 random events dispatch in (fire_at, seq) order") {
  Simulator sim;
  Rng rng(42);
  const int n = 1'000'000;
  struct Ref {
    uint64_t at;
    int idx;
  };
  std::vector<Ref> ref(n);
  std::vector<int> dispatched;
  dispatched.reserve(n);
  for (int i = 0; i < n; ++i) {
    uint64_t at = rng.next_below(10'000);
    ref[i] = {at, i};
    sim.schedule(SimTime{at}, [&dispatched, i] { dispatched.push_back(i); });
  }
  sim.run_all();
  std::stable_sort(ref.begin(), ref.end(),
                   [](const Ref& a, const Ref& b) { return a.at < b.at; });
  REQUIRE(dispatched.size() == ref.size());
  for (int i = 0; i < n; ++i) REQUIRE(dispatched[i] == ref[i].idx);
}

TEST_CASE("cancelled events do not fire") {
  Simulator sim;
  int fired = 0;
  EventId id = sim.schedule(SimTime{10}, [&] { ++fired; });
  sim.schedule(SimTime{10}, [&] { ++fired; });
  sim.cancel(id);
  sim.run_all();
  CHECK(fired == 1);
}

TEST_CASE("cost ledger sums categories to totals") {
  Simulator sim;
  sim.charge(host_cpu(0), CostKind::MmioRead, 750);
  sim.charge(host_cpu(0), CostKind::Service, 10'000);
  sim.charge(ipu_cpu(2), CostKind::AgentCompute, 426);
  CHECK(sim.ledger().busy_ns(host_cpu(0)) == 10'750);
  CHECK(sim.ledger().busy_ns(host_cpu(0), CostKind::MmioRead) == 750);
  CHECK(sim.ledger().busy_ns(ipu_cpu(2)) == 426);
  CHECK(sim.ledger().categories_sum_to_total());
}

TEST_CASE("deterministic rng streams repeat bitwise") {
  Rng a(7), b(7);
  for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());
  Rng c = derived_rng(7, 1), d = derived_rng(7, 2);
  CHECK(c.next_u64() != d.next_u64());
}

TEST_CASE("beta sampler has roughly the right mean") {
  Rng rng(123);
  double sum = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) sum += rng.beta(8, 2);
  CHECK(sum / n == doctest::Approx(0.8).epsilon(0.02));
}
