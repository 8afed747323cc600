#include "ringplan/halda.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "ringplan/apportion.hpp"

namespace ringplan {

namespace {

bool better(double v, double best) { return v < best - kTieTolerance * std::abs(best); }

PartitionPlan make_plan(const ClusterSpec& spec, const std::vector<bool>& forced, int k, std::vector<int> w,
                        std::vector<int> n, double objective) {
  PartitionPlan p;
  for (const auto& d : spec.devices) p.device_ids.push_back(d.id);
  p.w = std::move(w);
  p.n = std::move(n);
  p.relay.assign(spec.devices.size(), false);
  p.k = k;
  p.objective = objective;
  p.sets = classify_devices(spec, p.w, p.n, forced);
  return p;
}

std::optional<int> slowest_disk(const ClusterSpec& spec, const SetAssignment& sets) {
  std::optional<int> pick;
  for (int i = 0; i < spec.device_count(); ++i) {
    if (sets.set_of[i] == DeviceSet::m4 || sets.forced[i]) continue;
    if (!pick || spec.devices[i].disk_read_throughput() < spec.devices[*pick].disk_read_throughput()) pick = i;
  }
  return pick;
}

DeviceSet overload_class(const DeviceProfile& d) {
  if (d.os != OsKind::macos) return DeviceSet::m3;
  return d.metal() ? DeviceSet::m2 : DeviceSet::m1;
}

}  // namespace

std::vector<int> valid_factors(int L) {
  if (L < 1) throw std::invalid_argument("valid_factors: L must be >= 1");
  std::vector<int> out;
  for (int k = 1; k < L; ++k)
    if (L % k == 0) out.push_back(k);
  if (out.empty()) out.push_back(1);
  return out;
}

std::vector<int> initial_windows(const ClusterSpec& spec) {
  const int M = spec.device_count();
  const int L = spec.model.layer_count;
  if (M > L)
    throw PlanningError("cannot give each of " + std::to_string(M) + " devices a layer of a " + std::to_string(L) +
                            "-layer model",
                        {});
  std::vector<std::int64_t> budgets;
  for (const auto& d : spec.devices) budgets.push_back(memory_budget(d));
  std::vector<int> w = apportion(budgets, L);
  clamp_minimum(w, 1);
  return w;
}

std::optional<int> calibration_check(const ClusterSpec& spec, const PartitionPlan& plan) {
  const std::vector<MemoryUsage> usage = estimate_memory_usage(spec, plan);
  const int M = spec.device_count();
  bool fires = false;
  for (int g = 0; g < M && !fires; ++g) {
    if (!spec.devices[g].has_gpu() || usage[g].gpu_demand >= usage[g].gpu_budget) continue;
    for (int o = 0; o < M; ++o)
      if (o != g && usage[o].overloaded) fires = true;
  }
  if (!fires) return std::nullopt;
  return slowest_disk(spec, plan.sets);
}

SweepResult sweep_k(const ClusterSpec& spec, const SetAssignment& sets, bool canonical) {
  SweepResult out;
  SolveOptions so;
  so.canonical = canonical;
  for (int k : valid_factors(spec.model.layer_count)) {
    const IlpInstance inst = build_instance(spec, sets, k);
    const IlpResult r = solve(inst, so);
    if (!r.feasible()) {
      out.reasons.push_back("k=" + std::to_string(k) + ": " + r.reason);
      continue;
    }
    if (!out.plan || better(r.objective, out.plan->objective))
      out.plan = make_plan(spec, sets.forced, k, r.w, r.n, r.objective);
  }
  return out;
}

HaldaResult run_halda(const ClusterSpec& spec, const HaldaOptions& options) {
  const int M = spec.device_count();
  const int cap = options.iteration_cap > 0 ? options.iteration_cap : 4 * M + 8;
  HaldaResult result;

  std::vector<int> w = initial_windows(spec);
  std::vector<int> n(M, 0);
  std::vector<bool> forced(M, false);
  std::optional<PartitionPlan> best;
  std::optional<SetAssignment> prev;
  std::vector<std::string> reasons;
  bool stopped = false;

  for (int iter = 0; iter < cap; ++iter) {
    result.iterations = iter + 1;
    const SetAssignment sets = classify_devices(spec, w, n, forced);
    if (prev && sets == *prev) {
      stopped = true;
      break;
    }
    prev = sets;
    SweepResult sw = sweep_k(spec, sets);
    if (!sw.plan) {
      reasons = sw.reasons;
      std::optional<int> victim = slowest_disk(spec, sets);
      if (!victim) {
        stopped = true;
        break;
      }
      forced[*victim] = true;
      continue;
    }
    if (!best || better(sw.plan->objective, best->objective)) best = sw.plan;
    if (std::optional<int> victim = calibration_check(spec, *sw.plan)) {
      forced[*victim] = true;
      continue;
    }
    w = sw.plan->w;
    n = sw.plan->n;
  }
  result.converged = stopped;

  if (options.refine) {
    std::vector<int> fast;
    for (int i = 0; i < M; ++i)
      if (spec.devices[i].disk_read_throughput() > spec.disk_speed_threshold) fast.push_back(i);
    SetAssignment base = best ? best->sets : *prev;
    std::fill(base.forced.begin(), base.forced.end(), false);
    auto consider = [&](const SetAssignment& trial) {
      SweepResult sw = sweep_k(spec, trial);
      if (!sw.plan || (best && !better(sw.plan->objective, best->objective))) return false;
      best = sw.plan;
      return true;
    };
    if (static_cast<int>(fast.size()) <= options.exhaustive_fast_devices) {
      for (std::uint32_t mask = 0; mask < (1u << fast.size()); ++mask) {
        SetAssignment trial = base;
        for (std::size_t j = 0; j < fast.size(); ++j) {
          const int i = fast[j];
          trial.set_of[i] = (mask >> j) & 1u ? overload_class(spec.devices[i]) : DeviceSet::m4;
        }
        consider(trial);
      }
    } else {
      SetAssignment current = base;
      bool improved = true;
      while (improved) {
        improved = false;
        for (int i : fast) {
          SetAssignment trial = current;
          trial.set_of[i] = trial.set_of[i] == DeviceSet::m4 ? overload_class(spec.devices[i]) : DeviceSet::m4;
          if (!consider(trial)) continue;
          current = trial;
          improved = true;
          break;
        }
      }
    }
  }

  if (!best) throw PlanningError("no feasible plan for any k", reasons);

  IlpResult canon = solve(build_instance(spec, best->sets, best->k), SolveOptions{});
  if (canon.feasible() && !better(best->objective, canon.objective))
    best = make_plan(spec, best->sets.forced, best->k, canon.w, canon.n, canon.objective);

  for (int i = 0; i < M; ++i)
    if (best->sets.forced[i]) result.forced.push_back(spec.devices[i].id);
  result.plan = *best;
  return result;
}

PartitionPlan run(const ClusterSpec& spec, const HaldaOptions& options) { return run_halda(spec, options).plan; }

Selection select_devices(const ClusterSpec& spec, const PartitionPlan& plan, const HaldaOptions& options) {
  Selection cur;
  cur.spec = spec;
  cur.plan = plan;
  if (cur.plan.relay.size() != plan.w.size()) cur.plan.relay.assign(plan.w.size(), false);
  cur.plan.objective = evaluate_tpot(spec, cur.plan);

  while (true) {
    int pick = -1;
    for (int i = 1; i < cur.spec.device_count(); ++i)
      if (!cur.plan.relay[i] && cur.plan.w[i] == 1) {
        pick = i;
        break;
      }
    if (pick < 0) break;

    const std::string id = cur.spec.devices[pick].id;
    const bool keep_as_relay = spec.relays.count(id) > 0;
    ClusterSpec next = cur.spec;
    std::vector<bool> relay = cur.plan.relay;
    if (keep_as_relay) {
      relay[pick] = true;
    } else {
      next.devices.erase(next.devices.begin() + pick);
      relay.erase(relay.begin() + pick);
      next.relays.erase(id);
    }

    ClusterSpec compute = next;
    compute.devices.clear();
    compute.relays.clear();
    for (int i = 0; i < next.device_count(); ++i)
      if (!relay[i]) compute.devices.push_back(next.devices[i]);
    if (compute.devices.empty()) throw PlanningError("device selection would leave no compute device", {});

    PartitionPlan sub;
    try {
      sub = run(compute, options);
    } catch (const PlanningError&) {
      break;
    }

    PartitionPlan full;
    full.k = sub.k;
    full.relay = relay;
    full.sets.set_of.assign(next.devices.size(), DeviceSet::m4);
    full.sets.forced.assign(next.devices.size(), false);
    for (int i = 0, j = 0; i < next.device_count(); ++i) {
      full.device_ids.push_back(next.devices[i].id);
      if (relay[i]) {
        full.w.push_back(0);
        full.n.push_back(0);
        continue;
      }
      full.w.push_back(sub.w[j]);
      full.n.push_back(sub.n[j]);
      full.sets.set_of[i] = sub.sets.set_of[j];
      full.sets.forced[i] = sub.sets.forced[j];
      ++j;
    }
    full.objective = evaluate_tpot(next, full);
    if (full.objective > cur.plan.objective + kTieTolerance * std::abs(cur.plan.objective)) break;
    if (!keep_as_relay) cur.removed.push_back(id);
    cur.spec = std::move(next);
    cur.plan = std::move(full);
  }
  return cur;
}

}  // namespace ringplan
