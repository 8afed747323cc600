#include "ringplan/ilp.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace ringplan {

namespace {

ScaledBytes floor_div(ScaledBytes a, ScaledBytes b) {
  ScaledBytes q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

int clamp_to_int(ScaledBytes v, int lo, int hi) {
  if (v < lo) return lo;
  if (v > hi) return hi;
  return static_cast<int>(v);
}

bool ties(double v, double best) { return v <= best + kTieTolerance * std::abs(best); }

LinearProgram make_program(const IlpInstance& inst) {
  const int M = inst.device_count;
  LinearProgram lp;
  lp.num_vars = 2 * M;
  lp.cost.assign(2 * M, 0.0);
  lp.lower.assign(2 * M, 0.0);
  lp.upper.assign(2 * M, 0.0);
  lp.integer.assign(2 * M, true);
  std::vector<std::pair<int, double>> sum;
  for (int i = 0; i < M; ++i) {
    const DeviceLimits& d = inst.limits[i];
    lp.cost[i] = inst.k * inst.coeffs.a[i];
    lp.cost[M + i] = inst.k * inst.coeffs.b[i];
    sum.emplace_back(i, 1.0);
    if (d.n_hi > 0) {
      lp.lower[i] = d.w_lo;
      lp.upper[i] = d.w_hi;
      lp.upper[M + i] = d.n_hi;
      lp.add_row({{i, 1.0}, {M + i, -1.0}}, d.wn_lo, d.wn_hi);
    } else {
      lp.lower[i] = std::max(d.w_lo, d.wn_lo);
      lp.upper[i] = std::min(d.w_hi, d.wn_hi);
    }
  }
  lp.add_row(std::move(sum), inst.W, inst.W);
  return lp;
}

}  // namespace

double IlpInstance::constant() const {
  return k * std::accumulate(coeffs.c.begin(), coeffs.c.end(), 0.0) + coeffs.kappa;
}

IlpInstance build_instance(const ClusterSpec& spec, const SetAssignment& sets, int k) {
  const int L = spec.model.layer_count;
  if (k < 1 || L % k != 0)
    throw std::invalid_argument("build_instance: k=" + std::to_string(k) + " does not divide L=" +
                                std::to_string(L));
  IlpInstance inst;
  inst.k = k;
  inst.L = L;
  inst.W = L / k;
  inst.device_count = spec.device_count();
  inst.coeffs = objective_terms(spec, sets);
  inst.bounds = memory_bounds(spec, sets);
  inst.gpu_mask = inst.bounds.gpu_mask;
  const int M = inst.device_count;
  const int W = inst.W;
  if (W < M) {
    inst.trivially_infeasible = true;
    inst.infeasible_reason = "W=" + std::to_string(W) + " is smaller than the device count " + std::to_string(M);
  }

  const ScaledBytes unit = static_cast<ScaledBytes>(k) * inst.coeffs.bprime * spec.model.vocab_size;
  inst.limits.assign(M, DeviceLimits{});
  for (int i = 0; i < M; ++i) {
    DeviceLimits& d = inst.limits[i];
    d.w_lo = 1;
    d.w_hi = std::min(L, W);
    d.wn_lo = 0;
    d.wn_hi = W;
    d.n_hi = inst.gpu_mask[i] ? clamp_to_int(floor_div(inst.bounds.gpu_capacity[i], unit), 0, W) : 0;
  }
  for (const RamRow& row : inst.bounds.rows) {
    if (!row.active) continue;
    DeviceLimits& d = inst.limits[row.device];
    const ScaledBytes q = floor_div(row.capacity, unit);
    const bool on_w = row.n_coef == 0;
    int& lo = on_w ? d.w_lo : d.wn_lo;
    int& hi = on_w ? d.w_hi : d.wn_hi;
    if (row.strict) lo = std::max(lo, clamp_to_int(q + 1, -1, W + 1));
    else hi = std::min(hi, clamp_to_int(q, -1, W + 1));
  }
  for (int i = 0; i < M && !inst.trivially_infeasible; ++i) {
    const DeviceLimits& d = inst.limits[i];
    if (d.w_lo > d.w_hi || d.wn_lo > d.wn_hi || d.wn_lo > d.w_hi) {
      inst.trivially_infeasible = true;
      inst.infeasible_reason = "device '" + spec.devices[i].id + "' has no window size satisfying its " +
                               std::string(to_string(sets.set_of[i])) + " memory rows at k=" + std::to_string(k);
    }
  }
  return inst;
}

std::optional<int> optimal_gpu_layers(int w, const DeviceLimits& limits, double b) {
  const int lo = std::max(0, w - limits.wn_hi);
  const int hi = std::min({limits.n_hi, w - limits.wn_lo, w});
  if (lo > hi) return std::nullopt;
  return b < 0 ? hi : lo;
}

IlpResult solve(const IlpInstance& inst, const SolveOptions& options) {
  IlpResult out;
  if (inst.trivially_infeasible) {
    out.reason = inst.infeasible_reason;
    return out;
  }
  const int M = inst.device_count;
  LinearProgram lp = make_program(inst);
  MilpOptions mo;
  mo.node_limit = options.node_limit;
  MilpSolution sol = solve_milp(lp, mo);
  if (sol.status != SolveStatus::optimal) {
    out.status = sol.status;
    out.reason = sol.status == SolveStatus::limit ? "branch-and-bound node limit reached"
                                                  : "no integer point satisfies the memory rows at k=" +
                                                        std::to_string(inst.k);
    return out;
  }

  auto finish = [&](const std::vector<long>& xw, IlpResult& r) {
    r.w.assign(M, 0);
    r.n.assign(M, 0);
    for (int i = 0; i < M; ++i) {
      r.w[i] = static_cast<int>(xw[i]);
      std::optional<int> n = optimal_gpu_layers(r.w[i], inst.limits[i], inst.coeffs.b[i]);
      if (!n) return false;
      r.n[i] = *n;
    }
    r.objective = linear_objective(inst.coeffs, r.w, r.n, inst.k);
    r.status = SolveStatus::optimal;
    return true;
  };

  if (!finish(sol.x, out)) {
    out = IlpResult{};
    out.status = SolveStatus::limit;
    out.reason = "rounded solution violates a device interval";
    return out;
  }
  if (!options.canonical || M == 1) return out;

  // Fix w_0, w_1, ... to their smallest values among optimal solutions.
  const double best_total = out.objective;
  const double constant = inst.constant();
  std::vector<std::pair<int, double>> cap;
  for (int j = 0; j < 2 * M; ++j)
    if (lp.cost[j] != 0.0) cap.emplace_back(j, lp.cost[j]);
  const double slack = kTieTolerance * std::abs(best_total);
  lp.add_row(std::move(cap), -kInf, best_total - constant + slack);
  MilpOptions lex;
  lex.node_limit = options.node_limit;
  lex.integral_objective = true;
  bool ok = true;
  for (int i = 0; i + 1 < M && ok; ++i) {
    std::fill(lp.cost.begin(), lp.cost.end(), 0.0);
    lp.cost[i] = 1.0;
    MilpSolution s = solve_milp(lp, lex);
    if (s.status != SolveStatus::optimal) {
      ok = false;
      break;
    }
    lp.lower[i] = lp.upper[i] = static_cast<double>(s.x[i]);
  }
  if (!ok) return out;
  std::vector<long> xw(M);
  int used = 0;
  for (int i = 0; i + 1 < M; ++i) {
    xw[i] = std::lround(lp.lower[i]);
    used += static_cast<int>(xw[i]);
  }
  xw[M - 1] = inst.W - used;
  IlpResult canon;
  if (finish(xw, canon) && xw[M - 1] >= inst.limits[M - 1].w_lo && xw[M - 1] <= inst.limits[M - 1].w_hi &&
      ties(canon.objective, best_total))
    return canon;
  return out;
}

IlpResult brute_force_solve(const IlpInstance& inst) {
  if (inst.W > 24 || inst.device_count > 4)
    throw EnumerationGuardError("brute_force_solve: needs W <= 24 and M <= 4 (got W=" + std::to_string(inst.W) +
                                ", M=" + std::to_string(inst.device_count) + ")");
  IlpResult out;
  if (inst.trivially_infeasible) {
    out.reason = inst.infeasible_reason;
    return out;
  }
  const int M = inst.device_count;
  std::vector<int> w(M), n(M);
  std::vector<std::pair<std::vector<int>, std::vector<int>>> feasible;
  std::vector<double> values;

  std::function<void(int, int)> walk = [&](int i, int left) {
    if (i == M - 1) {
      w[i] = left;
    } else {
      for (int v = 1; v <= left - (M - 1 - i); ++v) {
        w[i] = v;
        walk(i + 1, left - v);
      }
      return;
    }
    for (int j = 0; j < M; ++j) {
      const DeviceLimits& d = inst.limits[j];
      if (w[j] < d.w_lo || w[j] > d.w_hi) return;
      std::optional<int> nj = optimal_gpu_layers(w[j], d, inst.coeffs.b[j]);
      if (!nj) return;
      n[j] = *nj;
    }
    feasible.emplace_back(w, n);
    values.push_back(linear_objective(inst.coeffs, w, n, inst.k));
  };
  walk(0, inst.W);

  if (feasible.empty()) {
    out.reason = "no composition satisfies the memory rows at k=" + std::to_string(inst.k);
    return out;
  }
  const double best = *std::min_element(values.begin(), values.end());
  for (std::size_t c = 0; c < feasible.size(); ++c) {
    if (!ties(values[c], best)) continue;
    out.status = SolveStatus::optimal;
    out.w = feasible[c].first;
    out.n = feasible[c].second;
    out.objective = values[c];
    break;
  }
  return out;
}

}  // namespace ringplan
