#include <doctest.h>

#include <map>
#include <numeric>

#include "ringplan/prp_sim.hpp"
#include "support.hpp"

using namespace ringplan;
using testsupport::kGiB;
using testsupport::kMiB;

namespace {

PartitionPlan plan_of(const ClusterSpec& s, std::vector<int> w, std::vector<int> n, int k) {
  PartitionPlan p;
  for (const auto& d : s.devices) p.device_ids.push_back(d.id);
  p.w = std::move(w);
  p.n = std::move(n);
  p.relay.assign(p.w.size(), false);
  for (std::size_t i = 0; i < p.w.size(); ++i) p.relay[i] = p.w[i] == 0;
  p.k = k;
  return p;
}

// Two CPU devices, 12 layers of 1 GiB, each device caching 3 GiB.
ClusterSpec conflict_spec() {
  ClusterSpec s;
  s.model = testsupport::simple_model(12, kGiB);
  s.disk_speed_threshold = 5e8;
  s.devices.push_back(testsupport::cpu_device("a", 1e10, 3 * kGiB, 2e9));
  s.devices.push_back(testsupport::cpu_device("b", 1e10, 3 * kGiB, 2e9));
  return s;
}

bool all_loads_equal(const SimResult& r, int from_token, int L, int expected) {
  for (std::size_t t = from_token; t < r.layer_loads.size(); ++t)
    for (int l = 0; l < L; ++l)
      if (r.layer_loads[t][l] != expected) return false;
  return true;
}

}  // namespace

TEST_SUITE("prp_sim") {
  TEST_CASE("schedule tiles the model in ring order") {
    std::mt19937_64 rng(31);
    for (int t = 0; t < 300; ++t) {
      const int M = 1 + t % 5;
      std::vector<int> w(M), n(M);
      int W = 0;
      for (int i = 0; i < M; ++i) {
        w[i] = std::uniform_int_distribution<int>(i == 0 ? 1 : 0, 6)(rng);
        n[i] = std::uniform_int_distribution<int>(0, w[i])(rng);
        W += w[i];
      }
      const int L = std::uniform_int_distribution<int>(W, 4 * W + 3)(rng);
      PartitionPlan p;
      p.w = w;
      p.n = n;
      RingSchedule s = build_schedule(p, L);
      int next = 0;
      for (const Segment& seg : s.segments) {
        CHECK(seg.first_layer == next);
        CHECK(seg.count <= w[seg.device]);
        CHECK(seg.gpu_count <= std::min(seg.count, n[seg.device]));
        next += seg.count;
      }
      CHECK(next == L);
      CHECK(s.rounds == (L + W - 1) / W);
      if (L % W != 0) CHECK(s.segments.back().count > 0);
      LayerCounts c = layer_counts(w, n, L);
      std::vector<int> per(M, 0);
      for (const Segment& seg : s.segments) per[seg.device] += seg.count;
      CHECK(per == c.layers);
    }
  }

  TEST_CASE("schedule rejects oversized windows") {
    PartitionPlan p;
    p.w = {5, 5};
    p.n = {0, 0};
    CHECK_THROWS_AS(build_schedule(p, 8), SimulationError);
  }

  TEST_CASE("page cache evicts least recently used") {
    PageCache c(3 * kMiB);
    c.insert(1, kMiB);
    c.insert(2, kMiB);
    c.insert(3, kMiB);
    c.touch(1);
    CHECK(c.insert(4, kMiB) == std::vector<int>{2});
    CHECK(c.resident() == std::vector<int>{3, 1, 4});
    CHECK(c.insert(5, 4 * kMiB).empty());
    CHECK_FALSE(c.contains(5));
    CHECK(c.used() == 3 * kMiB);
    c.clear();
    CHECK(c.used() == 0);
  }

  TEST_CASE("a single fitting device runs at the analytical rate") {
    ClusterSpec s;
    s.model = testsupport::simple_model(10, 10 * kMiB);
    s.disk_speed_threshold = 5e8;
    DeviceProfile d = testsupport::cpu_device("solo", 2e11, 8 * kGiB, 2e9);
    d.kv_copy_cpu = 1e-4;
    d.mem_throughput_cpu = 1e12;
    s.devices.push_back(d);
    PartitionPlan p = plan_of(s, {10}, {0}, 1);
    SimOptions o;
    o.decode_tokens = 4;
    SimResult r = simulate(s, p, o);
    // 10 layers of 5 ms compute + 0.1 ms copy, the output layer, one hop.
    const double expected = 10 * (5e-3 + 1e-4 + 10.0 * kMiB / 1e12) + 5e8 / 2e11 + 1e-3;
    REQUIRE(r.tpot_series.size() == 4);
    for (double x : r.tpot_series) CHECK(x == doctest::Approx(expected).epsilon(1e-12));
    CHECK(r.mean_tpot == doctest::Approx(evaluate_tpot(s, p)).epsilon(1e-12));
    CHECK(r.ttft > 0.0);
  }

  TEST_CASE("fitting clusters reproduce the analytical TPOT") {
    std::mt19937_64 rng(37);
    for (int t = 0; t < 60; ++t) {
      const int M = 1 + t % 4;
      const int L = std::uniform_int_distribution<int>(M, 30)(rng);
      ClusterSpec s = testsupport::random_spec(rng, M, L);
      s.model.input_bytes = 0;
      for (auto& d : s.devices) {
        d.ram_available = 1000 * kGiB;
        if (d.metal()) d.metal_working_set = 1000 * kGiB;
        if (d.cuda()) d.vram_available = 1000 * kGiB;
      }
      const int W = std::uniform_int_distribution<int>(M, L)(rng);
      std::vector<int> w(M, 1), n(M, 0);
      for (int extra = W - M; extra > 0; --extra) ++w[rng() % M];
      for (int i = 0; i < M; ++i)
        if (s.devices[i].has_gpu()) n[i] = std::uniform_int_distribution<int>(0, w[i])(rng);
      PartitionPlan p = plan_of(s, w, n, L / W);
      SimOptions o;
      o.decode_tokens = 3;
      SimResult r = simulate(s, p, o);
      CHECK(r.mean_tpot == doctest::Approx(evaluate_tpot(s, p)).epsilon(1e-9));
      for (std::size_t tok = 1; tok < r.layer_loads.size(); ++tok)
        CHECK(std::accumulate(r.layer_loads[tok].begin(), r.layer_loads[tok].end(), 0) == 0);
    }
  }

  TEST_CASE("pipeline prefetch beyond capacity loads every layer twice") {
    ClusterSpec s = conflict_spec();
    PartitionPlan p = plan_of(s, {6, 6}, {0, 0}, 1);
    SimOptions o;
    o.mode = SimMode::pp;
    o.decode_tokens = 4;
    SimResult r = simulate(s, p, o);
    CHECK(r.cache_capacity[0] == 3 * kGiB);
    CHECK(all_loads_equal(r, 1, 12, 2));
    for (std::size_t t = 1; t < r.token_disk_bytes.size(); ++t)
      for (Bytes b : r.token_disk_bytes[t]) CHECK(b == 12 * kGiB);
  }

  TEST_CASE("ring rounds within capacity load every layer once") {
    ClusterSpec s = conflict_spec();
    PartitionPlan p = plan_of(s, {1, 1}, {0, 0}, 6);
    SimOptions o;
    o.decode_tokens = 4;
    SimResult r = simulate(s, p, o);
    CHECK(all_loads_equal(r, 1, 12, 1));
    SimOptions pp = o;
    pp.mode = SimMode::pp;
    CHECK(simulate(s, p, pp).mean_tpot > r.mean_tpot);
  }

  TEST_CASE("prefetch never loses to faulting on demand") {
    ClusterSpec s = conflict_spec();
    PartitionPlan p = plan_of(s, {2, 2}, {0, 0}, 3);
    SimOptions o;
    o.decode_tokens = 3;
    SimOptions off = o;
    off.prefetch = false;
    CHECK(simulate(s, p, o).mean_tpot <= simulate(s, p, off).mean_tpot);
    SimOptions late = o;
    late.pessimistic_prefetch = true;
    CHECK(simulate(s, p, o).mean_tpot <= simulate(s, p, late).mean_tpot + 1e-12);
  }

  TEST_CASE("events respect causality") {
    std::mt19937_64 rng(41);
    for (int t = 0; t < 30; ++t) {
      const int M = 1 + t % 4;
      ClusterSpec s = testsupport::random_spec(rng, M, 16);
      std::vector<int> w(M, 16 / (2 * M)), n(M, 0);
      w[0] += 8 - std::accumulate(w.begin(), w.end(), 0);
      SimOptions o;
      o.decode_tokens = 2;
      o.mode = t % 2 ? SimMode::pp : SimMode::prp;
      SimResult r = simulate(s, plan_of(s, w, n, 2), o);
      std::map<int, double> compute_end, disk_end;
      double prev = -1;
      for (const SimEvent& e : r.events) {
        CHECK(e.start >= prev);
        prev = e.start;
        CHECK(e.duration >= 0.0);
        const bool disk = e.kind == EventKind::prefetch || e.kind == EventKind::fault_load;
        auto& end = disk ? disk_end : compute_end;
        if (disk || e.kind == EventKind::compute_cpu || e.kind == EventKind::compute_gpu ||
            e.kind == EventKind::send || e.kind == EventKind::output) {
          CHECK(e.start >= end[e.device] - 1e-12);
          end[e.device] = e.start + e.duration;
        }
      }
      CHECK(r.ttft > 0);
      CHECK(r.tpot_series.size() == 2);
    }
  }

  TEST_CASE("simulation is deterministic") {
    std::mt19937_64 rng(43);
    ClusterSpec s = testsupport::random_spec(rng, 3, 24);
    PartitionPlan p = plan_of(s, {3, 3, 2}, {0, 0, 0}, 3);
    SimOptions o;
    o.decode_tokens = 3;
    SimResult a = simulate(s, p, o);
    SimResult b = simulate(s, p, o);
    REQUIRE(a.events.size() == b.events.size());
    for (std::size_t i = 0; i < a.events.size(); ++i) {
      CHECK(a.events[i].start == b.events[i].start);
      CHECK(a.events[i].kind == b.events[i].kind);
    }
    CHECK(a.tpot_series == b.tpot_series);
  }

  TEST_CASE("CUDA layers stay pinned") {
    ClusterSpec s = conflict_spec();
    DeviceProfile& g = s.devices[1];
    g.backend = Backend::cuda;
    g.gpu_flops = {{QuantFormat::q4k, 1e12}, {QuantFormat::q6k, 1e12}};
    g.mem_throughput_gpu = 5e11;
    g.kv_copy_gpu = 1e-6;
    g.ram_to_vram = g.vram_to_ram = 1e-4;
    g.vram_available = 8 * kGiB;
    PartitionPlan p = plan_of(s, {6, 6}, {0, 4}, 1);
    SimOptions o;
    o.decode_tokens = 2;
    SimResult r = simulate(s, p, o);
    for (const auto& loads : r.layer_loads)
      for (int l = 6; l < 10; ++l) CHECK(loads[l] == 0);
  }

  TEST_CASE("overloaded Metal devices lose their cache every token") {
    ClusterSpec s;
    s.model = testsupport::simple_model(8, kGiB);
    s.disk_speed_threshold = 5e8;
    DeviceProfile mac = testsupport::cpu_device("mac", 5e10, 16 * kGiB, 2e9);
    mac.os = OsKind::macos;
    mac.backend = Backend::metal;
    mac.uma = true;
    mac.gpu_flops = {{QuantFormat::q4k, 4e11}, {QuantFormat::q6k, 4e11}};
    mac.mem_throughput_gpu = 1e11;
    mac.kv_copy_gpu = 1e-6;
    mac.metal_working_set = 6 * kGiB;
    s.devices.push_back(mac);
    PartitionPlan p = plan_of(s, {8}, {8}, 1);
    SimOptions o;
    o.decode_tokens = 3;
    SimResult cliff = simulate(s, p, o);
    for (std::size_t t = 1; t < cliff.token_disk_bytes.size(); ++t) CHECK(cliff.token_disk_bytes[t][0] >= 8 * kGiB);
    s.devices[0].metal_working_set = 12 * kGiB;
    SimResult fit = simulate(s, p, o);
    for (std::size_t t = 1; t < fit.token_disk_bytes.size(); ++t) CHECK(fit.token_disk_bytes[t][0] == 0);
  }

  TEST_CASE("prompt length and KV growth") {
    ClusterSpec s = conflict_spec();
    s.model.kv_tokens = 64;
    PartitionPlan p = plan_of(s, {6, 6}, {0, 0}, 1);
    SimOptions o;
    o.decode_tokens = 3;
    o.prompt_tokens = 1;
    const double short_prompt = simulate(s, p, o).ttft;
    o.prompt_tokens = 64;
    CHECK(simulate(s, p, o).ttft > short_prompt);
    for (auto& d : s.devices) d.ram_available = 64 * kGiB;
    o.kv_growth = true;
    SimResult r = simulate(s, p, o);
    for (std::size_t i = 1; i < r.tpot_series.size(); ++i) CHECK(r.tpot_series[i] > r.tpot_series[i - 1]);
  }

  TEST_CASE("relays forward without layers") {
    ClusterSpec s = conflict_spec();
    s.devices.push_back(testsupport::cpu_device("relay", 5e10, kGiB, 2e9));
    PartitionPlan p = plan_of(s, {3, 3, 0}, {0, 0, 0}, 2);
    SimOptions o;
    o.decode_tokens = 2;
    SimResult r = simulate(s, p, o);
    int relay_sends = 0;
    for (const SimEvent& e : r.events) {
      if (e.device != 2) continue;
      CHECK(e.kind != EventKind::compute_cpu);
      if (e.kind == EventKind::send) ++relay_sends;
    }
    CHECK(relay_sends == 3 * 2);
    CHECK(r.disk_bytes_read[2] == 0);
  }

  TEST_CASE("plan dimensions are checked") {
    ClusterSpec s = conflict_spec();
    CHECK_THROWS_AS(simulate(s, plan_of(s, {12}, {0}, 1)), SimulationError);
    CHECK_THROWS_AS(simulate(s, plan_of(s, {6, 6}, {0, 1}, 1)), SimulationError);
  }
}
