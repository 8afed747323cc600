#include <doctest.h>

#include "ringplan/halda.hpp"
#include "ringplan/ilp.hpp"
#include "support.hpp"

using namespace ringplan;
using testsupport::kGiB;

namespace {

ClusterSpec budgets_spec(std::vector<Bytes> ram, int L) {
  ClusterSpec s;
  s.model = testsupport::simple_model(L, kGiB / 2);
  s.disk_speed_threshold = 5e8;
  for (std::size_t i = 0; i < ram.size(); ++i)
    s.devices.push_back(testsupport::cpu_device("d" + std::to_string(i), 5e10, ram[i], 2e9));
  return s;
}

DeviceProfile cuda_device(std::string id, Bytes ram, Bytes vram) {
  DeviceProfile g = testsupport::cpu_device(std::move(id), 5e10, ram, 3e9);
  g.backend = Backend::cuda;
  g.gpu_flops = {{QuantFormat::q4k, 2e12}, {QuantFormat::q6k, 2e12}};
  g.mem_throughput_gpu = 5e11;
  g.kv_copy_gpu = 1e-6;
  g.ram_to_vram = g.vram_to_ram = 1e-4;
  g.vram_available = vram;
  return g;
}

}  // namespace

TEST_SUITE("halda") {
  TEST_CASE("valid factors") {
    CHECK(valid_factors(12) == std::vector<int>{1, 2, 3, 4, 6});
    CHECK(valid_factors(7) == std::vector<int>{1});
    CHECK(valid_factors(1) == std::vector<int>{1});
    CHECK_THROWS(valid_factors(0));
  }

  TEST_CASE("initial windows follow memory budgets") {
    CHECK(initial_windows(budgets_spec({8 * kGiB, 8 * kGiB, 11 * kGiB}, 32)) == std::vector<int>{9, 10, 13});
    CHECK(initial_windows(budgets_spec({100 * kGiB, 1}, 4)) == std::vector<int>{3, 1});
    CHECK_THROWS_AS(initial_windows(budgets_spec({kGiB, kGiB, kGiB}, 2)), PlanningError);
  }

  TEST_CASE("calibration fires when a GPU idles while another device overloads") {
    ClusterSpec s = budgets_spec({64 * kGiB, 2 * kGiB}, 16);
    s.devices[0] = cuda_device("gpu", 64 * kGiB, 8 * kGiB);
    PartitionPlan p;
    p.device_ids = {"gpu", "d1"};
    p.w = {8, 8};
    p.n = {2, 0};
    p.relay = {false, false};
    p.sets = classify_devices(s, p.w, p.n);
    REQUIRE(p.sets.set_of[1] == DeviceSet::m3);
    CHECK(calibration_check(s, p) == 1);
    p.n = {8, 0};
    p.w = {8, 8};
    s.devices[0].vram_available = 4 * kGiB;
    p.sets = classify_devices(s, p.w, p.n);
    CHECK(calibration_check(s, p) == std::nullopt);
  }

  TEST_CASE("one device takes the whole model") {
    ClusterSpec s = budgets_spec({64 * kGiB}, 10);
    HaldaResult r = run_halda(s);
    CHECK(r.plan.w == std::vector<int>{10});
    CHECK(r.plan.k == 1);
    CHECK(r.converged);
  }

  TEST_CASE("matches the exhaustive optimum on random specs") {
    std::mt19937_64 rng(23);
    for (int t = 0; t < 25; ++t) {
      const int M = 1 + t % 3;
      const int L = std::uniform_int_distribution<int>(std::max(2, M), 24)(rng);
      ClusterSpec s = testsupport::random_spec(rng, M, L);
      testsupport::OracleOptimum best = testsupport::exhaustive_optimum(s);
      CAPTURE(t);
      if (!best.tpot) {
        CHECK_THROWS_AS(run(s), PlanningError);
        continue;
      }
      PartitionPlan p = run(s);
      CHECK(testsupport::rel_close(p.objective, *best.tpot, 1e-9));
      CHECK(check_plan_feasibility(s, p).empty());
      CHECK(testsupport::raw_plan(s, p.w, p.n).feasible);
    }
  }

  TEST_CASE("unplaceable model raises a planning error with reasons") {
    ClusterSpec s = budgets_spec({kGiB / 4, kGiB / 4}, 8);
    for (auto& d : s.devices) d.disk_seq_read = 1e8;
    try {
      run(s);
      FAIL("expected a planning error");
    } catch (const PlanningError& e) {
      CHECK_FALSE(e.reasons().empty());
    }
  }

  TEST_CASE("a weak single-layer device is pruned") {
    ClusterSpec s = budgets_spec({64 * kGiB, 64 * kGiB}, 16);
    s.devices[1].cpu_flops = {{QuantFormat::q4k, 5e8}, {QuantFormat::q6k, 5e8}};
    s.devices[1].comm_latency = 5e-2;
    PartitionPlan p = run(s);
    REQUIRE(p.w[1] == 1);
    Selection sel = select_devices(s, p);
    CHECK(sel.removed == std::vector<std::string>{"d1"});
    CHECK(sel.plan.w == std::vector<int>{16});
    CHECK(sel.plan.objective <= evaluate_tpot(s, p));
  }

  TEST_CASE("relay ids stay in the ring with no layers") {
    ClusterSpec s = budgets_spec({64 * kGiB, 64 * kGiB, 64 * kGiB}, 16);
    s.devices[1].cpu_flops = {{QuantFormat::q4k, 5e8}, {QuantFormat::q6k, 5e8}};
    s.relays = {"d1"};
    PartitionPlan p = run(s);
    REQUIRE(p.w[1] == 1);
    Selection sel = select_devices(s, p);
    REQUIRE(sel.spec.device_count() >= 2);
    CHECK(sel.spec.devices[1].id == "d1");
    CHECK(sel.plan.relay[1]);
    CHECK(sel.plan.w[1] == 0);
    CHECK(sel.removed.empty() == (sel.spec.device_count() == 3));
  }

  TEST_CASE("selection keeps useful devices") {
    ClusterSpec s = budgets_spec({4 * kGiB, 4 * kGiB}, 16);
    PartitionPlan p = run(s);
    Selection sel = select_devices(s, p);
    CHECK(sel.removed.empty());
    CHECK(sel.plan.w == p.w);
  }
}
