#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ringplan/profiles.hpp"

namespace ringplan {

/// Byte quantities multiplied by the vocabulary size. The lookup-table row
/// read per token is b_i / V bytes, so scaling by V keeps every memory
/// comparison in exact integer arithmetic.
__extension__ typedef __int128 ScaledBytes;

struct LayerCounts {
  std::vector<int> layers;      // l_m
  std::vector<int> gpu_layers;  // l_m^gpu
  std::vector<int> windows;     // number of windows device m runs per token
  int remainder = 0;            // R = L mod W
  int total_window = 0;         // W = sum(w)
};

/// Layers each device processes per token when windows are dealt out in ring
/// order; the partial last round goes to devices in order, GPU layers first.
/// Zero-width windows (relays) are allowed.
LayerCounts layer_counts(std::span<const int> w, std::span<const int> n, int layer_total);

enum class DeviceSet { m1, m2, m3, m4 };
std::string_view to_string(DeviceSet s);

struct SetAssignment {
  std::vector<DeviceSet> set_of;  // indexed like ClusterSpec::devices
  std::vector<bool> forced;       // membership in M4^force

  std::vector<int> members(DeviceSet s) const;
  bool overloaded(int device) const { return set_of[device] != DeviceSet::m4; }
  bool operator==(const SetAssignment&) const = default;
};

/// Platform constants of one device: CPU seconds per layer (alpha), the
/// GPU-minus-CPU per-layer difference (beta), and per-window overhead (xi).
struct DeviceCoefficients {
  double alpha = 0.0;
  double beta = 0.0;
  double xi = 0.0;
};

class MissingThroughputError : public std::runtime_error {
 public:
  MissingThroughputError(const std::string& device, std::string_view backend, QuantFormat q);
  QuantFormat quant() const { return quant_; }

 private:
  QuantFormat quant_;
};

/// Seconds of arithmetic for one layer on the CPU / GPU, and for the output
/// layer on the CPU.
double cpu_layer_flops_time(const DeviceProfile& d, const ModelProfile& m);
double gpu_layer_flops_time(const DeviceProfile& d, const ModelProfile& m);
double output_flops_time(const DeviceProfile& d, const ModelProfile& m);

DeviceCoefficients device_coefficients(const DeviceProfile& d, const ModelProfile& m);

/// Whether device `index` overflows its memory (the Case 1-3 memory
/// condition) when it holds `layers` layers of which `gpu_layers` on the GPU.
/// Disk speed is not considered here.
bool memory_overloaded(const ClusterSpec& spec, int index, int layers, int gpu_layers);

/// Cases 1-4 evaluated at the given windows. Forced devices and devices whose
/// disk is not faster than the threshold always land in M4.
SetAssignment classify_devices(const ClusterSpec& spec, std::span<const int> w,
                               std::span<const int> n, const std::vector<bool>& forced = {});

struct LatencyCoefficients {
  std::vector<double> alpha, beta, xi;
  std::vector<double> a, b, c;
  double kappa = 0.0;
  Bytes bprime = 0;
  std::vector<double> b_cio;  // bytes; fractional because of the b_i / V row
};

LatencyCoefficients objective_terms(const ClusterSpec& spec, const SetAssignment& sets);

/// k (a.w + b.n + sum c) + kappa.
double linear_objective(const LatencyCoefficients& coeffs, std::span<const int> w,
                        std::span<const int> n, int k);

/// Block of a RAM constraint row, in the order the rows are stacked.
enum class RowBlock { m1, m2, m3, m4_macos, m4_metal, m4_linux };

/// One row of P_w w' + P_n n' + W z (<|<=) 0. In exact form the row reads
///   u * k * b' * V  >  capacity   (overload rows, strict)
///   u * k * b' * V  <= capacity   (M4 rows)
/// where u = w_coef * w + n_coef * n up to sign.
struct RamRow {
  int device = 0;
  RowBlock block = RowBlock::m1;
  int w_coef = 0;
  int n_coef = 0;
  bool active = false;
  double z = 0.0;
  ScaledBytes capacity = 0;
  bool strict = false;
};

struct MemoryBounds {
  std::vector<RamRow> rows;
  std::vector<double> z_gpu;
  std::vector<ScaledBytes> gpu_capacity;  // bytes * V available to GPU layers
  std::vector<bool> gpu_mask;             // diagonal of P_n^gpu
};

MemoryBounds memory_bounds(const ClusterSpec& spec, const SetAssignment& sets);

struct PartitionPlan {
  std::vector<std::string> device_ids;
  std::vector<int> w;
  std::vector<int> n;
  std::vector<bool> relay;
  int k = 1;
  double objective = 0.0;
  SetAssignment sets;
};

/// Per-device terms of the TPOT aggregate.
struct TpotTerms {
  double compute = 0.0;
  double memory = 0.0;
  double disk = 0.0;
  double comm = 0.0;
  double total() const { return compute + memory + disk + comm; }
};

/// Term-by-term aggregate with the max(.) disk terms left in place, so it is
/// valid for plans with a partial last round and for relay devices (w = 0).
std::vector<TpotTerms> tpot_terms(const ClusterSpec& spec, std::span<const int> w,
                                  std::span<const int> n);
double evaluate_tpot(const ClusterSpec& spec, const PartitionPlan& plan);

struct MemoryUsage {
  Bytes ram_demand = 0;
  Bytes gpu_demand = 0;
  Bytes ram_budget = 0;
  Bytes gpu_budget = 0;
  bool overloaded = false;
};

std::vector<MemoryUsage> estimate_memory_usage(const ClusterSpec& spec, const PartitionPlan& plan);

/// Constraint violations of `plan` under the LDA rules for the sets the plan
/// itself induces, computed from byte demands. Empty when feasible.
std::vector<std::string> check_plan_feasibility(const ClusterSpec& spec, const PartitionPlan& plan);

}  // namespace ringplan
