#include "ringplan/baselines.hpp"

#include <algorithm>
#include <numeric>

#include "ringplan/apportion.hpp"

namespace ringplan {

namespace {

int floor_layers(ScaledBytes room, ScaledBytes per_layer) {
  if (room <= 0) return 0;
  return static_cast<int>(std::min<ScaledBytes>(room / per_layer, 1 << 30));
}

double q4k_rate(const QuantMap& rates) {
  auto it = rates.find(QuantFormat::q4k);
  return it == rates.end() ? 0.0 : it->second;
}

PartitionPlan finish(const ClusterSpec& spec, std::vector<int> w) {
  PartitionPlan p;
  const int M = spec.device_count();
  for (const auto& d : spec.devices) p.device_ids.push_back(d.id);
  p.n.assign(M, 0);
  for (int i = 0; i < M; ++i) p.n[i] = std::min(w[i], gpu_layer_capacity(spec, i));
  p.w = std::move(w);
  p.relay.assign(M, false);
  p.k = 1;
  p.sets = classify_devices(spec, p.w, p.n);
  p.objective = evaluate_tpot(spec, p);
  return p;
}

}  // namespace

int gpu_layer_capacity(const ClusterSpec& spec, int index) {
  const DeviceProfile& d = spec.devices[index];
  if (!d.has_gpu()) return 0;
  const ModelProfile& m = spec.model;
  const ScaledBytes V = m.vocab_size;
  ScaledBytes room = 0;
  if (d.cuda()) room = static_cast<ScaledBytes>(d.vram_available - m.gpu_buffer) * V;
  else room = static_cast<ScaledBytes>(d.metal_working_set - m.gpu_buffer - (index == 0 ? m.output_bytes : 0)) * V;
  return floor_layers(room, static_cast<ScaledBytes>(m.effective_layer_bytes()) * V);
}

int layer_capacity(const ClusterSpec& spec, int index) {
  const DeviceProfile& d = spec.devices[index];
  const ModelProfile& m = spec.model;
  const ScaledBytes V = m.vocab_size;
  Bytes bytes = memory_budget(d) + discrete_gpu_budget(d) - m.cpu_buffer - (d.has_gpu() ? m.gpu_buffer : 0);
  ScaledBytes room = static_cast<ScaledBytes>(bytes) * V;
  if (index == 0) room -= static_cast<ScaledBytes>(m.input_bytes) + static_cast<ScaledBytes>(m.output_bytes) * V;
  return floor_layers(room, static_cast<ScaledBytes>(m.effective_layer_bytes()) * V);
}

PartitionPlan mem_sched(const ClusterSpec& spec) {
  std::vector<std::int64_t> budgets;
  for (const auto& d : spec.devices) budgets.push_back(memory_budget(d) + discrete_gpu_budget(d));
  return finish(spec, apportion(budgets, spec.model.layer_count));
}

PartitionPlan perf_sched(const ClusterSpec& spec) {
  const int M = spec.device_count();
  std::vector<double> power, cpu_power;
  for (const auto& d : spec.devices) {
    power.push_back(d.has_gpu() ? q4k_rate(d.gpu_flops) : q4k_rate(d.cpu_flops));
    cpu_power.push_back(q4k_rate(d.cpu_flops));
  }
  std::vector<int> w = apportion(power, spec.model.layer_count);

  std::vector<int> cap(M);
  int overflow = 0;
  for (int i = 0; i < M; ++i) {
    cap[i] = layer_capacity(spec, i);
    if (w[i] > cap[i]) {
      overflow += w[i] - cap[i];
      w[i] = cap[i];
    }
  }
  std::vector<int> order(M);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return cap[x] - w[x] > cap[y] - w[y]; });
  for (int i : order) {
    if (overflow == 0) break;
    const int take = std::min(overflow, cap[i] - w[i]);
    if (take <= 0) continue;
    w[i] += take;
    overflow -= take;
  }
  if (overflow > 0) {
    const std::vector<int> extra = apportion(cpu_power, overflow);
    for (int i = 0; i < M; ++i) w[i] += extra[i];
  }
  return finish(spec, std::move(w));
}

}  // namespace ringplan
