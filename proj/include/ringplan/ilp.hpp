#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ringplan/latency_model.hpp"
#include "ringplan/simplex.hpp"

namespace ringplan {

/// Integer limits one device's rows impose at a fixed k.
struct DeviceLimits {
  int w_lo = 1;
  int w_hi = 0;
  int wn_lo = 0;  // bounds on w - n (CPU-side layers per window)
  int wn_hi = 0;
  int n_hi = 0;   // GPU layers per window
};

struct IlpInstance {
  int k = 1;
  int W = 0;
  int L = 0;
  int device_count = 0;
  LatencyCoefficients coeffs;
  MemoryBounds bounds;
  std::vector<bool> gpu_mask;
  std::vector<DeviceLimits> limits;
  bool trivially_infeasible = false;
  std::string infeasible_reason;

  /// k * sum(c) + kappa.
  double constant() const;
};

IlpInstance build_instance(const ClusterSpec& spec, const SetAssignment& sets, int k);

/// Best n for a fixed w: the upper end of the feasible interval when b < 0,
/// otherwise the lower end. Empty when the interval is empty.
std::optional<int> optimal_gpu_layers(int w, const DeviceLimits& limits, double b);

struct IlpResult {
  SolveStatus status = SolveStatus::infeasible;
  std::vector<int> w;
  std::vector<int> n;
  double objective = 0.0;
  std::string reason;

  bool feasible() const { return status == SolveStatus::optimal; }
};

struct SolveOptions {
  /// Return the lexicographically smallest (w, n) among optimal solutions.
  bool canonical = true;
  long node_limit = 200000;
};

IlpResult solve(const IlpInstance& inst, const SolveOptions& options = {});

class EnumerationGuardError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Enumerates every composition of W into positive parts; requires W <= 24
/// and M <= 4.
IlpResult brute_force_solve(const IlpInstance& inst);

/// Relative tolerance under which two objectives count as tied.
inline constexpr double kTieTolerance = 1e-11;

}  // namespace ringplan
