#include "ringplan/latency_model.hpp"

#include <algorithm>
#include <numeric>

namespace ringplan {

namespace {

ScaledBytes scaled(Bytes b, const ModelProfile& m) {
  return static_cast<ScaledBytes>(b) * m.vocab_size;
}

// (b_i / V + b_o) * I_head + c_cpu, scaled by V.
ScaledBytes cio_scaled(const ModelProfile& m, bool head) {
  ScaledBytes io = head ? static_cast<ScaledBytes>(m.input_bytes) + scaled(m.output_bytes, m) : 0;
  return io + scaled(m.cpu_buffer, m);
}

double lookup_row_bytes(const ModelProfile& m) {
  return static_cast<double>(m.input_bytes) / m.vocab_size;
}

double cio_bytes(const ModelProfile& m, bool head) {
  double io = head ? lookup_row_bytes(m) + static_cast<double>(m.output_bytes) : 0.0;
  return io + static_cast<double>(m.cpu_buffer);
}

double flops_time(const DeviceProfile& d, const QuantMap& work, const QuantMap& rate,
                  std::string_view backend) {
  double t = 0.0;
  for (const auto& [q, f] : work) {
    if (f <= 0.0) continue;
    auto it = rate.find(q);
    if (it == rate.end() || !(it->second > 0.0)) throw MissingThroughputError(d.id, backend, q);
    t += f / it->second;
  }
  return t;
}

Bytes ceil_div_v(ScaledBytes x, int vocab) {
  ScaledBytes q = x / vocab;
  if (q * vocab < x) ++q;
  return static_cast<Bytes>(q);
}

}  // namespace

LayerCounts layer_counts(std::span<const int> w, std::span<const int> n, int layer_total) {
  if (w.size() != n.size()) throw std::invalid_argument("layer_counts: w and n differ in length");
  if (layer_total < 1) throw std::invalid_argument("layer_counts: layer count must be >= 1");
  LayerCounts out;
  out.total_window = std::accumulate(w.begin(), w.end(), 0);
  if (out.total_window < 1) throw std::invalid_argument("layer_counts: windows sum to zero");
  for (std::size_t i = 0; i < w.size(); ++i)
    if (w[i] < 0 || n[i] < 0 || n[i] > w[i])
      throw std::invalid_argument("layer_counts: need 0 <= n_m <= w_m");

  const int full = layer_total / out.total_window;
  out.remainder = layer_total % out.total_window;
  const int R = out.remainder;
  int prefix = 0;  // sum_{j<m} min(w_j, R)
  for (std::size_t m = 0; m < w.size(); ++m) {
    const int left = std::max(0, R - prefix);
    out.layers.push_back(full * w[m] + std::min(w[m], left));
    out.gpu_layers.push_back(full * n[m] + std::min(n[m], left));
    out.windows.push_back(full + std::min(1, left));
    prefix += std::min(w[m], R);
  }
  return out;
}

std::string_view to_string(DeviceSet s) {
  switch (s) {
    case DeviceSet::m1: return "M1";
    case DeviceSet::m2: return "M2";
    case DeviceSet::m3: return "M3";
    case DeviceSet::m4: return "M4";
  }
  return "?";
}

std::vector<int> SetAssignment::members(DeviceSet s) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < set_of.size(); ++i)
    if (set_of[i] == s) out.push_back(static_cast<int>(i));
  return out;
}

MissingThroughputError::MissingThroughputError(const std::string& device, std::string_view backend,
                                               QuantFormat q)
    : std::runtime_error("device '" + device + "' has no " + std::string(backend) +
                         " throughput for quant format " + std::string(to_string(q))),
      quant_(q) {}

double cpu_layer_flops_time(const DeviceProfile& d, const ModelProfile& m) {
  return flops_time(d, m.layer_flops, d.cpu_flops, "cpu");
}

double gpu_layer_flops_time(const DeviceProfile& d, const ModelProfile& m) {
  return flops_time(d, m.layer_flops, d.gpu_flops, to_string(d.backend));
}

double output_flops_time(const DeviceProfile& d, const ModelProfile& m) {
  return flops_time(d, m.output_flops, d.cpu_flops, "cpu");
}

DeviceCoefficients device_coefficients(const DeviceProfile& d, const ModelProfile& m) {
  const double bprime = static_cast<double>(m.effective_layer_bytes());
  DeviceCoefficients c;
  c.alpha = cpu_layer_flops_time(d, m) + d.kv_copy_cpu + bprime / d.mem_throughput_cpu;
  if (d.has_gpu()) {
    const double gpu = gpu_layer_flops_time(d, m) + d.kv_copy_gpu + bprime / d.mem_throughput_gpu;
    c.beta = gpu - c.alpha;
  }
  const double copies = d.has_gpu() && !d.uma ? d.ram_to_vram + d.vram_to_ram : 0.0;
  c.xi = copies + d.comm_latency;
  return c;
}

bool memory_overloaded(const ClusterSpec& spec, int index, int layers, int gpu_layers) {
  const DeviceProfile& d = spec.devices[index];
  const ModelProfile& m = spec.model;
  const ScaledBytes bp = scaled(m.effective_layer_bytes(), m);
  const ScaledBytes cio = cio_scaled(m, index == 0);
  switch (d.os) {
    case OsKind::macos:
      if (d.metal()) return layers * bp + cio + scaled(m.gpu_buffer, m) > scaled(d.metal_working_set, m);
      return layers * bp + cio > scaled(d.ram_available, m);
    case OsKind::linux:
    case OsKind::android:
      return (layers - gpu_layers) * bp + cio > scaled(d.ram_available + d.swapout_capacity(), m);
  }
  return false;
}

SetAssignment classify_devices(const ClusterSpec& spec, std::span<const int> w,
                               std::span<const int> n, const std::vector<bool>& forced) {
  const int M = spec.device_count();
  if (static_cast<int>(w.size()) != M || static_cast<int>(n.size()) != M)
    throw std::invalid_argument("classify_devices: plan dimension does not match device count");
  LayerCounts counts = layer_counts(w, n, spec.model.layer_count);
  SetAssignment sets;
  sets.set_of.assign(M, DeviceSet::m4);
  sets.forced.assign(M, false);
  for (int i = 0; i < M; ++i) {
    const DeviceProfile& d = spec.devices[i];
    if (i < static_cast<int>(forced.size()) && forced[i]) {
      sets.forced[i] = true;
      continue;
    }
    if (!(d.disk_read_throughput() > spec.disk_speed_threshold)) continue;
    if (!memory_overloaded(spec, i, counts.layers[i], counts.gpu_layers[i])) continue;
    if (d.os == OsKind::macos) sets.set_of[i] = d.metal() ? DeviceSet::m2 : DeviceSet::m1;
    else sets.set_of[i] = DeviceSet::m3;
  }
  return sets;
}

LatencyCoefficients objective_terms(const ClusterSpec& spec, const SetAssignment& sets) {
  const int M = spec.device_count();
  const ModelProfile& m = spec.model;
  LatencyCoefficients out;
  out.bprime = m.effective_layer_bytes();
  const double bprime = static_cast<double>(out.bprime);
  const double b = static_cast<double>(m.layer_bytes);

  for (int i = 0; i < M; ++i) {
    const DeviceProfile& d = spec.devices[i];
    DeviceCoefficients dc = device_coefficients(d, m);
    const double s = d.disk_read_throughput();
    out.alpha.push_back(dc.alpha);
    out.beta.push_back(dc.beta);
    out.xi.push_back(dc.xi);
    out.b_cio.push_back(cio_bytes(m, i == 0));
    out.c.push_back(dc.xi);
    switch (sets.set_of[i]) {
      case DeviceSet::m1:
        out.a.push_back(dc.alpha + bprime / s);
        out.b.push_back(0.0);
        break;
      case DeviceSet::m2:
        out.a.push_back(dc.alpha + b / s);
        out.b.push_back(dc.beta);
        break;
      case DeviceSet::m3:
        out.a.push_back(dc.alpha + bprime / s);
        out.b.push_back(dc.beta - bprime / s);
        break;
      case DeviceSet::m4:
        out.a.push_back(dc.alpha);
        out.b.push_back(dc.beta);
        break;
    }
  }

  const DeviceProfile& head = spec.devices.front();
  const double s1 = head.disk_read_throughput();
  const double row = lookup_row_bytes(m);
  out.kappa = output_flops_time(head, m) + (row + static_cast<double>(m.output_bytes)) / head.mem_throughput_cpu +
              row / s1;
  if (sets.set_of[0] != DeviceSet::m4) out.kappa += static_cast<double>(m.output_bytes) / s1;
  for (int i = 0; i < M; ++i) {
    if (sets.set_of[i] != DeviceSet::m1 && sets.set_of[i] != DeviceSet::m3) continue;
    const DeviceProfile& d = spec.devices[i];
    const double freed = static_cast<double>(d.ram_available + d.swapout_capacity());
    out.kappa += (static_cast<double>(m.cpu_buffer) - freed) / d.disk_read_throughput();
  }
  return out;
}

double linear_objective(const LatencyCoefficients& coeffs, std::span<const int> w,
                        std::span<const int> n, int k) {
  double sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) sum += coeffs.a[i] * w[i] + coeffs.b[i] * n[i] + coeffs.c[i];
  return k * sum + coeffs.kappa;
}

MemoryBounds memory_bounds(const ClusterSpec& spec, const SetAssignment& sets) {
  const int M = spec.device_count();
  const ModelProfile& m = spec.model;
  const double denom = static_cast<double>(m.layer_count) * static_cast<double>(m.effective_layer_bytes()) *
                       static_cast<double>(m.vocab_size);
  MemoryBounds out;

  auto ram_capacity = [&](int i) {
    const DeviceProfile& d = spec.devices[i];
    return scaled(d.ram_available + d.swapout_capacity(), m) - cio_scaled(m, i == 0);
  };
  auto metal_capacity = [&](int i) {
    return scaled(spec.devices[i].metal_working_set, m) - cio_scaled(m, i == 0) - scaled(m.gpu_buffer, m);
  };
  auto push = [&](int i, RowBlock block, int wc, int nc, bool active, ScaledBytes cap, bool overload) {
    RamRow r;
    r.device = i;
    r.block = block;
    r.w_coef = active ? wc : 0;
    r.n_coef = active ? nc : 0;
    r.active = active;
    r.capacity = cap;
    r.strict = overload;
    r.z = (overload ? 1.0 : -1.0) * static_cast<double>(cap) / denom;
    out.rows.push_back(r);
  };

  for (int i : sets.members(DeviceSet::m1)) push(i, RowBlock::m1, -1, 0, true, ram_capacity(i), true);
  for (int i : sets.members(DeviceSet::m2)) push(i, RowBlock::m2, -1, 0, true, metal_capacity(i), true);
  for (int i : sets.members(DeviceSet::m3)) push(i, RowBlock::m3, -1, 1, true, ram_capacity(i), true);
  const std::vector<int> m4 = sets.members(DeviceSet::m4);
  for (int i : m4) {
    const DeviceProfile& d = spec.devices[i];
    push(i, RowBlock::m4_macos, 1, 0, d.os == OsKind::macos && !d.metal(), ram_capacity(i), false);
  }
  for (int i : m4) {
    const DeviceProfile& d = spec.devices[i];
    push(i, RowBlock::m4_metal, 1, 0, d.os == OsKind::macos && d.metal(), metal_capacity(i), false);
  }
  for (int i : m4) {
    const DeviceProfile& d = spec.devices[i];
    push(i, RowBlock::m4_linux, 1, -1, d.os != OsKind::macos, ram_capacity(i), false);
  }

  for (int i = 0; i < M; ++i) {
    const DeviceProfile& d = spec.devices[i];
    ScaledBytes cap = 0;
    if (d.cuda()) cap = scaled(d.vram_available - m.gpu_buffer, m);
    else if (d.metal()) cap = scaled(d.metal_working_set - m.gpu_buffer - (i == 0 ? m.output_bytes : 0), m);
    out.gpu_capacity.push_back(cap);
    out.z_gpu.push_back(static_cast<double>(cap) / denom);
    out.gpu_mask.push_back(d.has_gpu());
  }
  return out;
}

std::vector<TpotTerms> tpot_terms(const ClusterSpec& spec, std::span<const int> w,
                                  std::span<const int> n) {
  const int M = spec.device_count();
  if (static_cast<int>(w.size()) != M || static_cast<int>(n.size()) != M)
    throw std::invalid_argument("evaluate_tpot: plan dimension does not match device count");
  const ModelProfile& m = spec.model;
  const LayerCounts counts = layer_counts(w, n, m.layer_count);
  const double bprime = static_cast<double>(m.effective_layer_bytes());
  const double b = static_cast<double>(m.layer_bytes);
  const double row = lookup_row_bytes(m);

  std::vector<TpotTerms> out(M);
  for (int i = 0; i < M; ++i) {
    const DeviceProfile& d = spec.devices[i];
    const bool head = i == 0;
    const double l = counts.layers[i];
    const double lg = counts.gpu_layers[i];
    const double lc = l - lg;
    TpotTerms& t = out[i];

    t.compute = lc * cpu_layer_flops_time(d, m);
    if (lg > 0) t.compute += lg * gpu_layer_flops_time(d, m);
    if (head) t.compute += output_flops_time(d, m);

    t.memory = lc * d.kv_copy_cpu + lc * bprime / d.mem_throughput_cpu;
    if (lg > 0) t.memory += lg * d.kv_copy_gpu + lg * bprime / d.mem_throughput_gpu;
    if (w[i] > 0 && d.has_gpu() && !d.uma) t.memory += counts.windows[i] * (d.ram_to_vram + d.vram_to_ram);
    if (head) t.memory += (row + static_cast<double>(m.output_bytes)) / d.mem_throughput_cpu;

    // Bytes mmap reloads per token; a device that fits pays only the
    // lookup-table row, which is read on the head.
    const double io = head ? row + static_cast<double>(m.output_bytes) : 0.0;
    const double floor_bytes = head ? row : 0.0;
    const double s = d.disk_read_throughput();
    double reload = 0.0;
    if (d.os == OsKind::macos && d.metal()) {
      const bool over = memory_overloaded(spec, i, counts.layers[i], counts.gpu_layers[i]);
      reload = over ? l * b + io : floor_bytes;
    } else {
      const double resident = d.os == OsKind::macos ? l : lc;
      const double excess = resident * bprime + io + static_cast<double>(m.cpu_buffer) -
                            static_cast<double>(d.ram_available + d.swapout_capacity());
      const bool over = memory_overloaded(spec, i, counts.layers[i], counts.gpu_layers[i]);
      reload = over ? excess : floor_bytes;
    }
    t.disk = reload / s;
    t.comm = counts.windows[i] * d.comm_latency;
  }
  return out;
}

double evaluate_tpot(const ClusterSpec& spec, const PartitionPlan& plan) {
  double total = 0.0;
  for (const TpotTerms& t : tpot_terms(spec, plan.w, plan.n)) total += t.total();
  return total;
}

std::vector<MemoryUsage> estimate_memory_usage(const ClusterSpec& spec, const PartitionPlan& plan) {
  const int M = spec.device_count();
  const ModelProfile& m = spec.model;
  const LayerCounts counts = layer_counts(plan.w, plan.n, m.layer_count);
  const ScaledBytes bp = scaled(m.effective_layer_bytes(), m);
  std::vector<MemoryUsage> out(M);
  for (int i = 0; i < M; ++i) {
    const DeviceProfile& d = spec.devices[i];
    const bool head = i == 0;
    const int l = counts.layers[i];
    const int lg = counts.gpu_layers[i];
    MemoryUsage& u = out[i];
    ScaledBytes ram = cio_scaled(m, head);
    if (d.os == OsKind::macos) {
      ram += l * bp;
      if (d.metal()) ram += scaled(m.gpu_buffer, m);
    } else {
      ram += (l - lg) * bp;
    }
    u.ram_demand = ceil_div_v(ram, m.vocab_size);
    u.ram_budget = d.metal() ? d.metal_working_set : d.ram_available + d.swapout_capacity();
    if (d.has_gpu()) {
      ScaledBytes gpu = lg * bp + scaled(m.gpu_buffer, m);
      if (d.metal() && head) gpu += scaled(m.output_bytes, m);
      u.gpu_demand = ceil_div_v(gpu, m.vocab_size);
      u.gpu_budget = d.cuda() ? d.vram_available : d.metal_working_set;
    }
    u.overloaded = memory_overloaded(spec, i, l, lg);
  }
  return out;
}

std::vector<std::string> check_plan_feasibility(const ClusterSpec& spec, const PartitionPlan& plan) {
  std::vector<std::string> issues;
  const int M = spec.device_count();
  const ModelProfile& m = spec.model;
  if (static_cast<int>(plan.w.size()) != M || static_cast<int>(plan.n.size()) != M) {
    issues.push_back("plan dimension does not match device count");
    return issues;
  }
  int total = 0;
  for (int i = 0; i < M; ++i) {
    const bool relay = i < static_cast<int>(plan.relay.size()) && plan.relay[i];
    const std::string& id = spec.devices[i].id;
    if (relay) {
      if (plan.w[i] != 0 || plan.n[i] != 0) issues.push_back(id + ": relay must carry no layers");
      continue;
    }
    if (plan.w[i] < 1) issues.push_back(id + ": window must be >= 1");
    if (plan.n[i] < 0 || plan.n[i] > plan.w[i]) issues.push_back(id + ": need 0 <= n <= w");
    if (plan.w[i] > m.layer_count) issues.push_back(id + ": window exceeds layer count");
    if (!spec.devices[i].has_gpu() && plan.n[i] != 0) issues.push_back(id + ": GPU layers on a CPU-only device");
    total += plan.w[i];
  }
  if (!issues.empty()) return issues;
  if (total < 1 || plan.k < 1 || plan.k * total != m.layer_count)
    issues.push_back("k * sum(w) must equal the layer count");
  if (!issues.empty()) return issues;

  const SetAssignment sets = classify_devices(spec, plan.w, plan.n, plan.sets.forced);
  const std::vector<MemoryUsage> usage = estimate_memory_usage(spec, plan);
  const LayerCounts counts = layer_counts(plan.w, plan.n, m.layer_count);
  for (int i = 0; i < M; ++i) {
    const DeviceProfile& d = spec.devices[i];
    // A device that may not overload (slow disk or forced) must fit.
    if (sets.set_of[i] == DeviceSet::m4 && usage[i].overloaded)
      issues.push_back(d.id + ": memory overloaded but device must stay in M4");
    if (counts.gpu_layers[i] > 0 && usage[i].gpu_demand > usage[i].gpu_budget)
      issues.push_back(d.id + ": GPU layers exceed " + std::string(to_string(d.backend)) + " memory");
  }
  return issues;
}

}  // namespace ringplan
