#include "ringplan/simplex.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ringplan {

namespace {

constexpr double kPivotTol = 1e-9;
constexpr double kCostTol = 1e-9;
constexpr double kPhaseOneTol = 1e-7;
constexpr int kMaxPivots = 100000;

class Tableau {
 public:
  explicit Tableau(const LinearProgram& lp) : n_(lp.num_vars) {
    for (const auto& row : lp.rows) {
      if (std::isinf(row.lo) && std::isinf(row.hi)) continue;
      double scale = 0.0;
      for (const auto& [j, v] : row.terms) scale = std::max(scale, std::abs(v));
      if (scale == 0.0) scale = 1.0;
      rows_.push_back(row);
      for (auto& term : rows_.back().terms) term.second /= scale;
      rows_.back().lo /= scale;
      rows_.back().hi /= scale;
    }
    m_ = static_cast<int>(rows_.size());
    cols_ = n_ + 2 * m_;
    lower_.assign(cols_, 0.0);
    upper_.assign(cols_, kInf);
    for (int j = 0; j < n_; ++j) {
      lower_[j] = lp.lower[j];
      upper_[j] = lp.upper[j];
      if (!std::isfinite(lower_[j]) || !std::isfinite(upper_[j]))
        throw std::invalid_argument("solve_lp: variable bounds must be finite");
    }
    for (int i = 0; i < m_; ++i) {
      lower_[n_ + i] = rows_[i].lo;
      upper_[n_ + i] = rows_[i].hi;
    }
    at_upper_.assign(cols_, false);
    for (int i = 0; i < m_; ++i) at_upper_[n_ + i] = std::isinf(rows_[i].lo);

    // A x - s + sigma a = 0, starting from the all-artificial basis.
    tab_.assign(static_cast<std::size_t>(m_) * cols_, 0.0);
    basis_.resize(m_);
    value_.resize(m_);
    is_basic_.assign(cols_, false);
    for (int i = 0; i < m_; ++i) {
      double r = -nonbasic_value(n_ + i);
      for (const auto& [j, v] : rows_[i].terms) r += v * nonbasic_value(j);
      const double sigma = r > 0 ? -1.0 : 1.0;
      for (const auto& [j, v] : rows_[i].terms) at(i, j) += sigma * v;
      at(i, n_ + i) = -sigma;
      at(i, n_ + m_ + i) = 1.0;
      basis_[i] = n_ + m_ + i;
      is_basic_[n_ + m_ + i] = true;
      value_[i] = std::abs(r);
    }
  }

  SolveStatus run(const std::vector<double>& cost, int& pivots) {
    std::vector<double> d(cols_);
    while (true) {
      if (pivots >= kMaxPivots) return SolveStatus::limit;
      for (int j = 0; j < cols_; ++j) {
        if (is_basic_[j]) continue;
        double dj = cost[j];
        for (int i = 0; i < m_; ++i) dj -= cost[basis_[i]] * at(i, j);
        d[j] = dj;
      }
      int enter = -1;
      double dir = 0.0;
      for (int j = 0; j < cols_; ++j) {
        if (is_basic_[j] || !(upper_[j] > lower_[j])) continue;
        if (!at_upper_[j] && d[j] < -kCostTol && upper_[j] > lower_[j]) {
          enter = j;
          dir = 1.0;
          break;
        }
        if (at_upper_[j] && d[j] > kCostTol) {
          enter = j;
          dir = -1.0;
          break;
        }
      }
      if (enter < 0) return SolveStatus::optimal;

      double step = upper_[enter] - lower_[enter];
      int leave = -1;
      bool leave_upper = false;
      for (int i = 0; i < m_; ++i) {
        const double rate = -dir * at(i, enter);
        double limit = kInf;
        bool hits_upper = false;
        if (rate < -kPivotTol) {
          limit = (value_[i] - lower_[basis_[i]]) / -rate;
        } else if (rate > kPivotTol) {
          limit = (upper_[basis_[i]] - value_[i]) / rate;
          hits_upper = true;
        } else {
          continue;
        }
        limit = std::max(0.0, limit);
        if (limit < step || (limit == step && leave >= 0 && basis_[i] < basis_[leave])) {
          step = limit;
          leave = i;
          leave_upper = hits_upper;
        }
      }
      if (std::isinf(step)) throw std::runtime_error("solve_lp: unbounded relaxation");
      ++pivots;

      for (int i = 0; i < m_; ++i) value_[i] += -dir * at(i, enter) * step;
      const double entered = nonbasic_value(enter) + dir * step;
      if (leave < 0) {
        at_upper_[enter] = !at_upper_[enter];
        continue;
      }
      const int out = basis_[leave];
      is_basic_[out] = false;
      at_upper_[out] = leave_upper;
      pivot(leave, enter);
      basis_[leave] = enter;
      is_basic_[enter] = true;
      value_[leave] = entered;
    }
  }

  double artificial_sum() const {
    double s = 0.0;
    for (int i = 0; i < m_; ++i)
      if (basis_[i] >= n_ + m_) s += value_[i];
    return s;
  }

  void close_artificials() {
    for (int j = n_ + m_; j < cols_; ++j) upper_[j] = 0.0;
  }

  std::vector<double> structural() const {
    std::vector<double> x(n_);
    for (int j = 0; j < n_; ++j) x[j] = nonbasic_value(j);
    for (int i = 0; i < m_; ++i)
      if (basis_[i] < n_) x[basis_[i]] = std::clamp(value_[i], lower_[basis_[i]], upper_[basis_[i]]);
    return x;
  }

  int cols() const { return cols_; }
  int structural_count() const { return n_; }
  int row_count() const { return m_; }

 private:
  double& at(int i, int j) { return tab_[static_cast<std::size_t>(i) * cols_ + j]; }
  double at(int i, int j) const { return tab_[static_cast<std::size_t>(i) * cols_ + j]; }
  double nonbasic_value(int j) const { return at_upper_[j] ? upper_[j] : lower_[j]; }

  void pivot(int r, int c) {
    const double p = at(r, c);
    double* prow = &tab_[static_cast<std::size_t>(r) * cols_];
    for (int j = 0; j < cols_; ++j) prow[j] /= p;
    prow[c] = 1.0;
    for (int i = 0; i < m_; ++i) {
      if (i == r) continue;
      double* row = &tab_[static_cast<std::size_t>(i) * cols_];
      const double f = row[c];
      if (f == 0.0) continue;
      for (int j = 0; j < cols_; ++j) row[j] -= f * prow[j];
      row[c] = 0.0;
    }
  }

  int n_ = 0;
  int m_ = 0;
  int cols_ = 0;
  std::vector<LinearProgram::Row> rows_;
  std::vector<double> lower_, upper_;
  std::vector<bool> at_upper_, is_basic_;
  std::vector<double> tab_;
  std::vector<int> basis_;
  std::vector<double> value_;
};

bool within_bounds(const LinearProgram& lp, const std::vector<long>& x, double tol) {
  for (int j = 0; j < lp.num_vars; ++j)
    if (x[j] < lp.lower[j] - tol || x[j] > lp.upper[j] + tol) return false;
  for (const auto& row : lp.rows) {
    double v = 0.0;
    for (const auto& [j, c] : row.terms) v += c * static_cast<double>(x[j]);
    if (v < row.lo - tol * (1.0 + std::abs(row.lo))) return false;
    if (v > row.hi + tol * (1.0 + std::abs(row.hi))) return false;
  }
  return true;
}

}  // namespace

LpSolution solve_lp(const LinearProgram& lp) {
  if (static_cast<int>(lp.cost.size()) != lp.num_vars || static_cast<int>(lp.lower.size()) != lp.num_vars ||
      static_cast<int>(lp.upper.size()) != lp.num_vars)
    throw std::invalid_argument("solve_lp: vector sizes do not match num_vars");
  LpSolution out;
  for (int j = 0; j < lp.num_vars; ++j)
    if (lp.lower[j] > lp.upper[j]) return out;

  Tableau t(lp);
  std::vector<double> cost(t.cols(), 0.0);
  for (int j = t.structural_count() + t.row_count(); j < t.cols(); ++j) cost[j] = 1.0;
  SolveStatus st = t.run(cost, out.pivots);
  if (st != SolveStatus::optimal) {
    out.status = st;
    return out;
  }
  if (t.artificial_sum() > kPhaseOneTol) return out;

  t.close_artificials();
  double scale = 0.0;
  for (double c : lp.cost) scale = std::max(scale, std::abs(c));
  if (scale == 0.0) scale = 1.0;
  std::fill(cost.begin(), cost.end(), 0.0);
  for (int j = 0; j < lp.num_vars; ++j) cost[j] = lp.cost[j] / scale;
  st = t.run(cost, out.pivots);
  if (st != SolveStatus::optimal) {
    out.status = st;
    return out;
  }
  out.status = SolveStatus::optimal;
  out.x = t.structural();
  for (int j = 0; j < lp.num_vars; ++j) out.value += lp.cost[j] * out.x[j];
  return out;
}

MilpSolution solve_milp(const LinearProgram& lp, const MilpOptions& options) {
  struct Node {
    std::vector<double> lower, upper;
  };
  MilpSolution best;
  bool have = false;
  std::vector<Node> stack{{lp.lower, lp.upper}};
  LinearProgram work = lp;

  while (!stack.empty()) {
    if (best.nodes >= options.node_limit) {
      best.status = SolveStatus::limit;
      return best;
    }
    Node node = std::move(stack.back());
    stack.pop_back();
    ++best.nodes;
    work.lower = node.lower;
    work.upper = node.upper;
    const LpSolution rel = solve_lp(work);
    if (rel.status == SolveStatus::limit) {
      best.status = SolveStatus::limit;
      return best;
    }
    if (rel.status != SolveStatus::optimal) continue;
    if (have) {
      const double cutoff = options.integral_objective
                                ? best.value - 1.0 + options.integrality_tol
                                : best.value - 1e-9 * std::max(1.0, std::abs(best.value));
      if (rel.value >= cutoff) continue;
    }

    int branch = -1;
    double worst = options.integrality_tol;
    for (int j = 0; j < lp.num_vars; ++j) {
      if (!lp.integer.empty() && !lp.integer[j]) continue;
      const double f = std::abs(rel.x[j] - std::round(rel.x[j]));
      if (f > worst) {
        worst = f;
        branch = j;
      }
    }
    if (branch < 0) {
      std::vector<long> x(lp.num_vars);
      for (int j = 0; j < lp.num_vars; ++j) x[j] = std::lround(rel.x[j]);
      if (!within_bounds(work, x, options.feasibility_tol)) continue;
      double v = 0.0;
      for (int j = 0; j < lp.num_vars; ++j) v += lp.cost[j] * static_cast<double>(x[j]);
      if (!have || v < best.value) {
        best.x = std::move(x);
        best.value = v;
        have = true;
      }
      continue;
    }
    Node up = node;
    up.lower[branch] = std::ceil(rel.x[branch]);
    Node down = std::move(node);
    down.upper[branch] = std::floor(rel.x[branch]);
    stack.push_back(std::move(up));
    stack.push_back(std::move(down));
  }
  best.status = have ? SolveStatus::optimal : SolveStatus::infeasible;
  return best;
}

}  // namespace ringplan
