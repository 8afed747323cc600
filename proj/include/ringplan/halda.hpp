#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ringplan/ilp.hpp"
#include "ringplan/latency_model.hpp"

namespace ringplan {

class PlanningError : public std::runtime_error {
 public:
  PlanningError(const std::string& what, std::vector<std::string> reasons)
      : std::runtime_error(what), reasons_(std::move(reasons)) {}
  const std::vector<std::string>& reasons() const { return reasons_; }

 private:
  std::vector<std::string> reasons_;
};

/// Divisors of L other than L, ascending; {1} when L = 1.
std::vector<int> valid_factors(int L);

/// Layer windows proportional to memory_budget, summing to L with every
/// device holding at least one layer.
std::vector<int> initial_windows(const ClusterSpec& spec);

/// Index of the device to force into M4 when some GPU has free memory while
/// another device is overloaded: the non-forced overloaded-class device with
/// the slowest disk. Empty when calibration does not apply.
std::optional<int> calibration_check(const ClusterSpec& spec, const PartitionPlan& plan);

struct HaldaOptions {
  int iteration_cap = 0;  // 0 means 4M + 8
  /// After the main loop, search device sets beyond the iterates: every
  /// overload/M4 choice when at most `exhaustive_fast_devices` devices have a
  /// fast disk, single-device moves otherwise.
  bool refine = true;
  int exhaustive_fast_devices = 8;
};

struct HaldaResult {
  PartitionPlan plan;
  bool converged = false;
  int iterations = 0;
  std::vector<std::string> forced;
};

/// Best plan for each k of valid_factors(L) under fixed sets; ties keep the
/// smaller k. Empty with reasons when every k is infeasible.
struct SweepResult {
  std::optional<PartitionPlan> plan;
  std::vector<std::string> reasons;
};
SweepResult sweep_k(const ClusterSpec& spec, const SetAssignment& sets, bool canonical = false);

HaldaResult run_halda(const ClusterSpec& spec, const HaldaOptions& options = {});
PartitionPlan run(const ClusterSpec& spec, const HaldaOptions& options = {});

struct Selection {
  ClusterSpec spec;        // devices left in the ring, relays included
  PartitionPlan plan;      // relays carry w = 0 and relay = true
  std::vector<std::string> removed;
};

/// Drops devices that received a single layer, one at a time, re-planning
/// after each removal and stopping when a removal would raise TPOT. The head
/// is never removed; ids listed as relays stay in the ring with w = 0.
Selection select_devices(const ClusterSpec& spec, const PartitionPlan& plan, const HaldaOptions& options = {});

}  // namespace ringplan
