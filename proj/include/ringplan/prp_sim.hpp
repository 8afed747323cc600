#pragma once

#include <cstdint>
#include <list>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ringplan/latency_model.hpp"

namespace ringplan {

/// One window of consecutive layers run by one device in one round.
/// Layers are 0-based: [first_layer, first_layer + count).
struct Segment {
  int device = 0;
  int round = 0;
  int first_layer = 0;
  int count = 0;
  int gpu_count = 0;  // the first gpu_count layers run on the GPU
};

struct RingSchedule {
  int rounds = 0;
  std::vector<Segment> segments;                // ring order
  std::vector<std::vector<int>> by_device;      // indices into segments
};

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tiles [0, L) in ring order. Relays (w = 0) get empty segments in every
/// round they forward.
RingSchedule build_schedule(const PartitionPlan& plan, int L);

/// LRU page cache over whole layers.
class PageCache {
 public:
  explicit PageCache(Bytes capacity) : capacity_(capacity) {}

  bool contains(int item) const { return index_.count(item) > 0; }
  void touch(int item);
  /// Inserts (or refreshes) an item, evicting least recently touched items.
  /// Items larger than the whole cache are not kept. Returns evicted ids.
  std::vector<int> insert(int item, Bytes bytes);
  void clear();

  Bytes capacity() const { return capacity_; }
  Bytes used() const { return used_; }
  std::vector<int> resident() const;  // least recently touched first

 private:
  Bytes capacity_;
  Bytes used_ = 0;
  std::list<std::pair<int, Bytes>> order_;
  std::unordered_map<int, std::list<std::pair<int, Bytes>>::iterator> index_;
};

enum class EventKind { recv, compute_gpu, compute_cpu, prefetch, fault_load, send, output };
std::string_view to_string(EventKind k);

struct SimEvent {
  int device = 0;
  EventKind kind = EventKind::recv;
  double start = 0.0;
  double duration = 0.0;
  int token = 0;   // 0 is the prefill pass
  int round = 0;
  int layer = -1;  // layer_count stands for the output layer
  Bytes bytes = 0;
};

enum class SimMode { pp, prp };

struct SimOptions {
  SimMode mode = SimMode::prp;
  bool prefetch = true;
  /// Start prefetching a segment only when its hidden state arrives.
  bool pessimistic_prefetch = false;
  /// Metal devices whose demand exceeds the working set drop their cache at
  /// the start of every token.
  bool metal_cliff = true;
  /// Grow the KV context by one token per generated token.
  bool kv_growth = false;
  int prompt_tokens = 1;
  int decode_tokens = 1;
};

struct SimResult {
  double ttft = 0.0;
  std::vector<double> tpot_series;
  double mean_tpot = 0.0;
  std::vector<SimEvent> events;
  std::vector<std::string> device_ids;
  std::vector<Bytes> disk_bytes_read;                 // per device, whole run
  std::vector<std::vector<Bytes>> token_disk_bytes;   // [token][device]
  std::vector<std::vector<int>> layer_loads;          // [token][layer], output layer last
  std::vector<Bytes> cache_capacity;                  // per device
  int rounds = 0;
};

/// Weight bytes each device's page cache may hold for the given plan.
Bytes cache_capacity(const ClusterSpec& spec, int device, int layers, int gpu_layers);

SimResult simulate(const ClusterSpec& spec, const PartitionPlan& plan, const SimOptions& options = {});

}  // namespace ringplan
