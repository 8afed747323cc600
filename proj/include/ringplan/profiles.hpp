#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace ringplan {

using Bytes = std::int64_t;

enum class QuantFormat { q4k, q5k, q6k, q80, fp16, fp32 };

inline constexpr std::array<QuantFormat, 6> kAllQuantFormats = {
    QuantFormat::q4k, QuantFormat::q5k,  QuantFormat::q6k,
    QuantFormat::q80, QuantFormat::fp16, QuantFormat::fp32};

std::string_view to_string(QuantFormat q);
std::optional<QuantFormat> parse_quant(std::string_view tag);

enum class OsKind { macos, linux, android };
enum class Backend { none, cuda, metal };

std::string_view to_string(OsKind os);
std::string_view to_string(Backend backend);

/// Ops (or ops/second) keyed by quantization format.
using QuantMap = std::map<QuantFormat, double>;

/// Measured capabilities of one device. Fields that do not apply to the
/// device's backend or OS are zero and are omitted when serialized.
struct DeviceProfile {
  std::string id;
  OsKind os = OsKind::linux;
  bool uma = false;
  Backend backend = Backend::none;

  QuantMap cpu_flops;
  QuantMap gpu_flops;

  double mem_throughput_cpu = 0.0;  // bytes/s
  double mem_throughput_gpu = 0.0;  // bytes/s
  double kv_copy_cpu = 0.0;         // s per layer
  double kv_copy_gpu = 0.0;         // s per layer
  double ram_to_vram = 0.0;         // s per transfer
  double vram_to_ram = 0.0;         // s per transfer
  double comm_latency = 0.0;        // s per hop
  double disk_seq_read = 0.0;       // bytes/s
  double disk_rand_read = 0.0;      // bytes/s

  Bytes ram_available = 0;
  Bytes metal_working_set = 0;  // macOS + Metal
  Bytes vram_available = 0;     // CUDA
  Bytes swap_available = 0;     // Android
  Bytes bytes_can_swap = 0;     // Android

  bool has_gpu() const { return backend != Backend::none; }
  bool metal() const { return backend == Backend::metal; }
  bool cuda() const { return backend == Backend::cuda; }

  /// Sequential read throughput for Linux/Android (mmap is configured for
  /// sequential access there), random read throughput on macOS.
  double disk_read_throughput() const;

  /// Bytes an Android device can push to swap: min(bytes_can_swap, swap).
  Bytes swapout_capacity() const;

  bool operator==(const DeviceProfile&) const = default;
};

struct ModelProfile {
  std::string name;
  int layer_count = 0;
  QuantMap layer_flops;
  QuantMap output_flops;
  Bytes layer_bytes = 0;
  Bytes input_bytes = 0;
  Bytes output_bytes = 0;
  int kv_heads = 0;
  int v_heads = 0;
  int kv_head_dim = 0;
  int v_head_dim = 0;
  int embed_dim = 0;
  int vocab_size = 1;
  int kv_tokens = 0;
  Bytes cpu_buffer = 0;
  Bytes gpu_buffer = 0;

  /// Per-token KV bytes written by one layer (FP16 keys and values).
  Bytes kv_bytes_per_token() const {
    return 2 * (static_cast<Bytes>(kv_heads) * kv_head_dim +
                static_cast<Bytes>(v_heads) * v_head_dim);
  }
  /// Layer weight bytes plus that layer's KV cache for `tokens` tokens.
  Bytes effective_layer_bytes(int tokens) const {
    return layer_bytes + kv_bytes_per_token() * tokens;
  }
  Bytes effective_layer_bytes() const { return effective_layer_bytes(kv_tokens); }

  bool operator==(const ModelProfile&) const = default;
};

struct ClusterSpec {
  std::vector<DeviceProfile> devices;  // ring order, devices[0] is the head
  ModelProfile model;
  double disk_speed_threshold = 0.0;
  std::set<std::string> relays;

  int device_count() const { return static_cast<int>(devices.size()); }
  int index_of(std::string_view id) const;

  bool operator==(const ClusterSpec&) const = default;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Carries every violated invariant, one message per entry.
class ValidationError : public ConfigError {
 public:
  explicit ValidationError(std::vector<std::string> issues);
  const std::vector<std::string>& issues() const { return issues_; }

 private:
  std::vector<std::string> issues_;
};

/// Returns one message per violated invariant; empty when the spec is valid.
std::vector<std::string> validate(const ClusterSpec& spec);

ClusterSpec parse_cluster_spec(const nlohmann::json& doc);
ClusterSpec parse_cluster_spec_text(std::string_view text);
ClusterSpec load_cluster_spec(const std::string& path);

nlohmann::json to_json(const ClusterSpec& spec);
nlohmann::json to_json(const DeviceProfile& device);
nlohmann::json to_json(const ModelProfile& model);

/// Memory the planner may fill on this device at initialization time.
Bytes memory_budget(const DeviceProfile& d);

/// Extra budget a device's GPU adds beyond memory_budget (CUDA VRAM only;
/// Metal shares the working set already counted by memory_budget).
Bytes discrete_gpu_budget(const DeviceProfile& d);

}  // namespace ringplan
