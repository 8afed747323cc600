#pragma once

#include <limits>
#include <utility>
#include <vector>

namespace ringplan {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// min c.x  s.t.  row_lo <= A x <= row_hi,  lower <= x <= upper.
/// Variable bounds must be finite; row bounds may be infinite on one side.
struct LinearProgram {
  struct Row {
    std::vector<std::pair<int, double>> terms;
    double lo = -kInf;
    double hi = kInf;
  };

  int num_vars = 0;
  std::vector<double> cost;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<Row> rows;
  std::vector<bool> integer;

  int add_row(std::vector<std::pair<int, double>> terms, double lo, double hi) {
    rows.push_back({std::move(terms), lo, hi});
    return static_cast<int>(rows.size()) - 1;
  }
};

enum class SolveStatus { optimal, infeasible, limit };

struct LpSolution {
  SolveStatus status = SolveStatus::infeasible;
  std::vector<double> x;
  double value = 0.0;
  int pivots = 0;
};

/// Dense bounded-variable primal simplex (two phase, Bland's rule).
LpSolution solve_lp(const LinearProgram& lp);

struct MilpOptions {
  double integrality_tol = 1e-6;
  double feasibility_tol = 1e-7;
  long node_limit = 200000;
  /// Objective takes integer values at integer points, so a node whose bound
  /// is within 1 - tol of the incumbent cannot improve on it.
  bool integral_objective = false;
};

struct MilpSolution {
  SolveStatus status = SolveStatus::infeasible;
  std::vector<long> x;
  double value = 0.0;
  long nodes = 0;
};

/// Depth-first branch and bound over the LP relaxation. Branches on the most
/// fractional variable, down branch first.
MilpSolution solve_milp(const LinearProgram& lp, const MilpOptions& options = {});

}  // namespace ringplan
