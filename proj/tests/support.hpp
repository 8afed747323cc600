#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ringplan/latency_model.hpp"
#include "ringplan/profiles.hpp"

namespace testsupport {

using ringplan::Bytes;
using ringplan::ClusterSpec;
using ringplan::DeviceProfile;
using ringplan::ModelProfile;
using ringplan::QuantFormat;

inline constexpr Bytes kMiB = Bytes{1} << 20;
inline constexpr Bytes kGiB = Bytes{1} << 30;

__extension__ typedef __int128 Big;

inline ModelProfile simple_model(int L, Bytes layer_bytes) {
  ModelProfile m;
  m.name = "test-model";
  m.layer_count = L;
  m.layer_flops = {{QuantFormat::q4k, 1e9}};
  m.output_flops = {{QuantFormat::q6k, 5e8}};
  m.layer_bytes = layer_bytes;
  m.input_bytes = 0;
  m.output_bytes = 0;
  m.kv_heads = 8;
  m.v_heads = 8;
  m.kv_head_dim = 64;
  m.v_head_dim = 64;
  m.embed_dim = 4096;
  m.vocab_size = 32000;
  m.kv_tokens = 0;
  m.cpu_buffer = 0;
  m.gpu_buffer = 0;
  return m;
}

inline DeviceProfile cpu_device(std::string id, double flops, Bytes ram, double disk) {
  DeviceProfile d;
  d.id = std::move(id);
  d.os = ringplan::OsKind::linux;
  d.cpu_flops = {{QuantFormat::q4k, flops}, {QuantFormat::q6k, flops}};
  d.mem_throughput_cpu = 5e10;
  d.kv_copy_cpu = 1e-5;
  d.comm_latency = 1e-3;
  d.disk_seq_read = disk;
  d.disk_rand_read = disk;
  d.ram_available = ram;
  return d;
}

/// Random heterogeneous cluster. Memory is scaled to the model so that some
/// devices overflow, some disks are below the threshold, and GPUs vary in size.
inline ClusterSpec random_spec(std::mt19937_64& rng, int M, int L) {
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto pick = [&](int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); };
  auto bytes = [&](double lo, double hi) { return static_cast<Bytes>(uni(lo, hi)); };

  ClusterSpec s;
  ModelProfile& m = s.model;
  m.name = "random";
  m.layer_count = L;
  m.layer_flops = {{QuantFormat::q4k, uni(2e8, 2e9)}};
  if (pick(3) == 0) m.layer_flops[QuantFormat::q6k] = uni(1e7, 2e8);
  m.output_flops = {{QuantFormat::q6k, uni(2e8, 2e9)}};
  m.layer_bytes = bytes(50.0 * kMiB, 600.0 * kMiB);
  m.vocab_size = pick(2) == 0 ? 32000 : 128256;
  m.input_bytes = static_cast<Bytes>(uni(0.2, 1.2) * m.layer_bytes) + pick(1000);
  m.output_bytes = static_cast<Bytes>(uni(0.3, 1.5) * m.layer_bytes);
  m.kv_heads = 8;
  m.v_heads = 8;
  m.kv_head_dim = 128;
  m.v_head_dim = 128;
  m.embed_dim = 4096;
  const int kv_choices[] = {0, 256, 1024, 4096};
  m.kv_tokens = kv_choices[pick(4)];
  m.cpu_buffer = bytes(32.0 * kMiB, 256.0 * kMiB);
  m.gpu_buffer = bytes(64.0 * kMiB, 512.0 * kMiB);
  s.disk_speed_threshold = 5e8;

  const double share = static_cast<double>(m.effective_layer_bytes()) * L / M;
  for (int i = 0; i < M; ++i) {
    DeviceProfile d;
    d.id = "dev" + std::to_string(i);
    const int os = pick(3);
    d.os = os == 0 ? ringplan::OsKind::macos : os == 1 ? ringplan::OsKind::linux : ringplan::OsKind::android;
    if (d.os == ringplan::OsKind::macos && pick(3) != 0) {
      d.backend = ringplan::Backend::metal;
      d.uma = true;
    } else if (d.os == ringplan::OsKind::linux && pick(2) == 0) {
      d.backend = ringplan::Backend::cuda;
    }
    const double cpu = uni(1e10, 1.5e11);
    d.cpu_flops = {{QuantFormat::q4k, cpu}, {QuantFormat::q6k, cpu * uni(0.6, 1.0)}};
    d.mem_throughput_cpu = uni(2e10, 8e10);
    d.kv_copy_cpu = uni(1e-6, 1e-4);
    d.comm_latency = uni(1e-4, 1e-2);
    d.disk_seq_read = uni(2e8, 4e9);
    d.disk_rand_read = uni(2e8, 3e9);
    d.ram_available = static_cast<Bytes>(uni(0.15, 1.6) * share) + m.cpu_buffer;
    if (d.has_gpu()) {
      const double gpu = uni(2e11, 3e12);
      d.gpu_flops = {{QuantFormat::q4k, gpu}, {QuantFormat::q6k, gpu * uni(0.6, 1.0)}};
      d.mem_throughput_gpu = uni(1e11, 9e11);
      d.kv_copy_gpu = uni(1e-6, 5e-5);
      if (!d.uma) {
        d.ram_to_vram = uni(1e-5, 3e-4);
        d.vram_to_ram = uni(1e-5, 3e-4);
      }
    }
    if (d.metal()) d.metal_working_set = static_cast<Bytes>(d.ram_available * uni(0.6, 0.9));
    if (d.cuda()) d.vram_available = static_cast<Bytes>(uni(0.0, 1.3) * share) + m.gpu_buffer / 2;
    if (d.os == ringplan::OsKind::android) {
      d.swap_available = bytes(0.0, 2.0 * kGiB);
      d.bytes_can_swap = bytes(0.0, 1.0 * kGiB);
    }
    s.devices.push_back(std::move(d));
  }
  return s;
}

/// Random set assignment: fast-disk devices land in their overload class or
/// M4 with equal odds, slow-disk devices always in M4.
inline ringplan::SetAssignment random_sets(std::mt19937_64& rng, const ClusterSpec& s) {
  ringplan::SetAssignment sets;
  for (const DeviceProfile& d : s.devices) {
    ringplan::DeviceSet set = ringplan::DeviceSet::m4;
    if (d.disk_read_throughput() > s.disk_speed_threshold && rng() % 2 == 0) {
      if (d.os != ringplan::OsKind::macos) set = ringplan::DeviceSet::m3;
      else set = d.metal() ? ringplan::DeviceSet::m2 : ringplan::DeviceSet::m1;
    }
    sets.set_of.push_back(set);
    sets.forced.push_back(false);
  }
  return sets;
}

// ---------------------------------------------------------------------------
// Raw per-device model, written straight from the byte and time definitions.

inline double rate_time(const ringplan::QuantMap& work, const ringplan::QuantMap& rate) {
  double t = 0.0;
  for (const auto& [q, f] : work) t += f / rate.at(q);
  return t;
}

struct RawDevice {
  bool feasible = true;
  double tpot = 0.0;
};

/// Device `i` holding l layers (lg on the GPU) spread over `windows` windows.
inline RawDevice raw_device(const ClusterSpec& s, int i, int l, int lg, int windows) {
  const DeviceProfile& d = s.devices[i];
  const ModelProfile& m = s.model;
  const bool head = i == 0;
  const Big V = m.vocab_size;
  const Big bp = m.layer_bytes + Big(m.kv_tokens) * 2 * (Big(m.kv_heads) * m.kv_head_dim + Big(m.v_heads) * m.v_head_dim);
  const double bpd = static_cast<double>(bp);
  const double b = static_cast<double>(m.layer_bytes);
  const double row = static_cast<double>(m.input_bytes) / m.vocab_size;
  const int lc = l - lg;
  RawDevice out;
  if (lg > 0 && !d.has_gpu()) out.feasible = false;

  double t = lc * rate_time(m.layer_flops, d.cpu_flops);
  if (lg > 0) t += lg * rate_time(m.layer_flops, d.gpu_flops);
  if (head) t += rate_time(m.output_flops, d.cpu_flops);

  t += lc * (d.kv_copy_cpu + bpd / d.mem_throughput_cpu);
  if (lg > 0) t += lg * (d.kv_copy_gpu + bpd / d.mem_throughput_gpu);
  if (d.has_gpu() && !d.uma && l > 0) t += windows * (d.ram_to_vram + d.vram_to_ram);
  if (head) t += (row + static_cast<double>(m.output_bytes)) / d.mem_throughput_cpu;

  // Everything below in bytes * V.
  const Big io = head ? Big(m.input_bytes) + Big(m.output_bytes) * V : 0;
  const Big cpu_buf = Big(m.cpu_buffer) * V;
  const Big gpu_buf = Big(m.gpu_buffer) * V;
  bool over = false;
  double reload = 0.0;
  const double s_disk = d.os == ringplan::OsKind::macos ? d.disk_rand_read : d.disk_seq_read;
  if (d.os == ringplan::OsKind::macos && d.metal()) {
    over = Big(l) * bp * V + io + cpu_buf + gpu_buf > Big(d.metal_working_set) * V;
    reload = over ? l * b + (head ? row + static_cast<double>(m.output_bytes) : 0.0) : 0.0;
  } else {
    const int resident = d.os == ringplan::OsKind::macos ? l : lc;
    Bytes limit = d.ram_available;
    if (d.os == ringplan::OsKind::android) limit += std::min(d.swap_available, d.bytes_can_swap);
    const Big demand = Big(resident) * bp * V + io + cpu_buf;
    over = demand > Big(limit) * V;
    reload = over ? static_cast<double>(demand - Big(limit) * V) / m.vocab_size : 0.0;
  }
  if (!over && head) reload = row;
  t += reload / s_disk;
  t += windows * d.comm_latency;
  out.tpot = t;

  if (over && !(s_disk > s.disk_speed_threshold)) out.feasible = false;
  if (lg > 0 && d.has_gpu()) {
    Big gpu = Big(lg) * bp * V + gpu_buf;
    if (d.metal() && head) gpu += Big(m.output_bytes) * V;
    const Bytes budget = d.cuda() ? d.vram_available : d.metal_working_set;
    if (gpu > Big(budget) * V) out.feasible = false;
  }
  return out;
}

/// Layers per device by walking the ring window by window.
inline std::vector<std::pair<int, int>> walk_layers(const std::vector<int>& w, const std::vector<int>& n, int L,
                                                    std::vector<int>* windows = nullptr) {
  std::vector<std::pair<int, int>> out(w.size(), {0, 0});
  if (windows) windows->assign(w.size(), 0);
  const int W = std::accumulate(w.begin(), w.end(), 0);
  int layer = 0;
  while (layer < L) {
    // A full round visits every device, relays included; a partial one stops
    // at the device computing the final layer.
    const bool full = L - layer >= W;
    for (std::size_t m = 0; m < w.size() && (full || layer < L); ++m) {
      if (windows) ++(*windows)[m];
      if (w[m] == 0) continue;
      for (int j = 0; j < w[m] && layer < L; ++j, ++layer) {
        ++out[m].first;
        if (j < n[m]) ++out[m].second;
      }
    }
  }
  return out;
}

struct RawPlan {
  bool feasible = true;
  double tpot = 0.0;
};

inline RawPlan raw_plan(const ClusterSpec& s, const std::vector<int>& w, const std::vector<int>& n) {
  std::vector<int> windows;
  const auto layers = walk_layers(w, n, s.model.layer_count, &windows);
  RawPlan out;
  for (int i = 0; i < s.device_count(); ++i) {
    if (w[i] < 1 || n[i] < 0 || n[i] > w[i]) out.feasible = false;
    RawDevice r = raw_device(s, i, layers[i].first, layers[i].second, windows[i]);
    out.feasible = out.feasible && r.feasible;
    out.tpot += r.tpot;
  }
  return out;
}

inline bool rel_close(double a, double b, double rel = 1e-9) {
  return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b));
}

struct OracleOptimum {
  std::optional<double> tpot;
  int k = 0;
  long plans = 0;
};

/// Global minimum of the raw model over every k dividing L (k < L), every
/// w >= 1 with k * sum(w) = L, and every 0 <= n <= w. The raw cost is a sum of
/// per-device terms, so the composition search runs as a knapsack.
inline OracleOptimum exhaustive_optimum(const ClusterSpec& s) {
  const int M = s.device_count();
  const int L = s.model.layer_count;
  const double inf = std::numeric_limits<double>::infinity();
  OracleOptimum best;
  for (int k = 1; k <= std::max(1, L - 1); ++k) {
    if (L % k != 0) continue;
    const int W = L / k;
    if (W < M) continue;
    std::vector<std::vector<double>> dev(M, std::vector<double>(W + 1, inf));
    for (int i = 0; i < M; ++i)
      for (int w = 1; w <= W; ++w)
        for (int n = 0; n <= (s.devices[i].has_gpu() ? w : 0); ++n) {
          ++best.plans;
          RawDevice r = raw_device(s, i, k * w, k * n, k);
          if (r.feasible) dev[i][w] = std::min(dev[i][w], r.tpot);
        }
    std::vector<double> acc(W + 1, inf);
    acc[0] = 0.0;
    for (int i = 0; i < M; ++i) {
      std::vector<double> next(W + 1, inf);
      for (int used = 0; used <= W; ++used) {
        if (acc[used] == inf) continue;
        for (int w = 1; used + w <= W; ++w)
          if (dev[i][w] < inf) next[used + w] = std::min(next[used + w], acc[used] + dev[i][w]);
      }
      acc = std::move(next);
    }
    if (acc[W] < inf && (!best.tpot || acc[W] < *best.tpot)) {
      best.tpot = acc[W];
      best.k = k;
    }
  }
  return best;
}

}  // namespace testsupport
