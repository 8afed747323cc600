#include "ringplan/prp_sim.hpp"

#include <algorithm>
#include <deque>
#include <numeric>

namespace ringplan {

RingSchedule build_schedule(const PartitionPlan& plan, int L) {
  if (plan.w.size() != plan.n.size()) throw SimulationError("plan w and n differ in length");
  const int M = static_cast<int>(plan.w.size());
  const int W = std::accumulate(plan.w.begin(), plan.w.end(), 0);
  if (W < 1) throw SimulationError("plan assigns no layers");
  if (W > L) throw SimulationError("plan windows sum to " + std::to_string(W) + " > L=" + std::to_string(L));

  RingSchedule s;
  s.by_device.resize(M);
  s.rounds = L / W + (L % W != 0 ? 1 : 0);
  int next = 0;
  for (int r = 0; r < s.rounds; ++r) {
    int last = M - 1;
    if (L - next < W) {
      // Partial round: it ends at the device that computes the final layer.
      int left = L - next;
      for (int m = 0; m < M; ++m) {
        left -= std::min(plan.w[m], left);
        if (left == 0 && plan.w[m] > 0) {
          last = m;
          break;
        }
      }
    }
    for (int m = 0; m <= last; ++m) {
      Segment seg;
      seg.device = m;
      seg.round = r;
      seg.first_layer = next;
      seg.count = std::min(plan.w[m], L - next);
      seg.gpu_count = std::min(plan.n[m], seg.count);
      next += seg.count;
      s.by_device[m].push_back(static_cast<int>(s.segments.size()));
      s.segments.push_back(seg);
    }
  }
  return s;
}

void PageCache::touch(int item) {
  auto it = index_.find(item);
  if (it == index_.end()) return;
  order_.splice(order_.end(), order_, it->second);
}

std::vector<int> PageCache::insert(int item, Bytes bytes) {
  std::vector<int> evicted;
  if (auto it = index_.find(item); it != index_.end()) {
    touch(item);
    return evicted;
  }
  if (bytes > capacity_) return evicted;
  while (used_ + bytes > capacity_ && !order_.empty()) {
    auto [id, b] = order_.front();
    order_.pop_front();
    index_.erase(id);
    used_ -= b;
    evicted.push_back(id);
  }
  order_.emplace_back(item, bytes);
  index_[item] = std::prev(order_.end());
  used_ += bytes;
  return evicted;
}

void PageCache::clear() {
  order_.clear();
  index_.clear();
  used_ = 0;
}

std::vector<int> PageCache::resident() const {
  std::vector<int> out;
  for (const auto& [id, b] : order_) out.push_back(id);
  return out;
}

std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::recv: return "recv";
    case EventKind::compute_gpu: return "compute_gpu";
    case EventKind::compute_cpu: return "compute_cpu";
    case EventKind::prefetch: return "prefetch";
    case EventKind::fault_load: return "fault_load";
    case EventKind::send: return "send";
    case EventKind::output: return "output";
  }
  return "?";
}

Bytes cache_capacity(const ClusterSpec& spec, int device, int layers, int gpu_layers) {
  const DeviceProfile& d = spec.devices[device];
  const ModelProfile& m = spec.model;
  const Bytes kv = m.kv_bytes_per_token() * m.kv_tokens;
  const Bytes row = device == 0 ? (m.input_bytes + m.vocab_size - 1) / m.vocab_size : 0;
  Bytes cap = 0;
  if (d.os == OsKind::macos) {
    cap = d.metal() ? d.metal_working_set - m.gpu_buffer : d.ram_available;
    cap -= kv * layers;
  } else {
    cap = d.ram_available + d.swapout_capacity();
    cap -= kv * (layers - gpu_layers);
  }
  cap -= m.cpu_buffer + row;
  return std::max<Bytes>(0, cap);
}

namespace {

struct Pending {
  int item;
  double issue;
  int token;
};

struct Flight {
  int item;
  double start;
  double end;
};

struct DeviceState {
  PageCache cache{0};
  double disk_rate = 1.0;
  double free_at = 0.0;
  double busy_until = 0.0;
  std::deque<Pending> queue;
  std::optional<Flight> flight;
  bool pinned_gpu = false;
  bool cliff = false;
};

class Simulator {
 public:
  Simulator(const ClusterSpec& spec, const PartitionPlan& plan, const SimOptions& opt)
      : spec_(spec), opt_(opt), L_(spec.model.layer_count) {
    const int M = spec.device_count();
    if (static_cast<int>(plan.w.size()) != M || static_cast<int>(plan.n.size()) != M)
      throw SimulationError("plan has " + std::to_string(plan.w.size()) + " devices, spec has " + std::to_string(M));
    for (int i = 0; i < M; ++i) {
      if (plan.w[i] < 0 || plan.n[i] < 0 || plan.n[i] > plan.w[i])
        throw SimulationError("device '" + spec.devices[i].id + "' needs 0 <= n <= w");
      if (plan.n[i] > 0 && !spec.devices[i].has_gpu())
        throw SimulationError("device '" + spec.devices[i].id + "' has GPU layers but no GPU");
    }
    if (opt.decode_tokens < 1) throw SimulationError("decode_tokens must be >= 1");

    PartitionPlan run = plan;
    const LayerCounts counts = layer_counts(plan.w, plan.n, L_);
    if (opt.mode == SimMode::pp) {
      run.w = counts.layers;
      run.n = counts.gpu_layers;
      run.k = 1;
    }
    schedule_ = build_schedule(run, L_);

    devices_.resize(M);
    result_.cache_capacity.resize(M);
    for (int i = 0; i < M; ++i) {
      const DeviceProfile& d = spec.devices[i];
      DeviceState& s = devices_[i];
      s.cache = PageCache(cache_capacity(spec, i, counts.layers[i], counts.gpu_layers[i]));
      s.disk_rate = d.disk_read_throughput();
      s.pinned_gpu = d.cuda();
      s.cliff = opt.metal_cliff && d.metal() && memory_overloaded(spec, i, counts.layers[i], counts.gpu_layers[i]);
      result_.cache_capacity[i] = s.cache.capacity();
      result_.device_ids.push_back(d.id);
    }
    result_.disk_bytes_read.assign(M, 0);
    result_.token_disk_bytes.assign(opt.decode_tokens + 1, std::vector<Bytes>(M, 0));
    result_.layer_loads.assign(opt.decode_tokens + 1, std::vector<int>(L_ + 1, 0));
    result_.rounds = schedule_.rounds;
  }

  SimResult run() {
    const int M = spec_.device_count();
    const int tokens = opt_.decode_tokens + 1;
    if (opt_.prefetch && !opt_.pessimistic_prefetch)
      for (int d = 0; d < M; ++d) issue_unit(d, 0, first_segment(d), 0.0);

    std::vector<double> emitted;
    double ready = 0.0;
    for (int t = 0; t < tokens; ++t) {
      std::vector<bool> started(M, false);
      for (int si = 0; si < static_cast<int>(schedule_.segments.size()); ++si) {
        const Segment& seg = schedule_.segments[si];
        DeviceState& dev = devices_[seg.device];
        double now = std::max(ready, dev.free_at);
        if (!started[seg.device]) {
          started[seg.device] = true;
          if (dev.cliff) {
            advance(seg.device, now);
            dev.cache.clear();
          }
        }
        if (opt_.prefetch && opt_.pessimistic_prefetch) issue_segment(seg.device, si, t, now);
        emit(seg.device, EventKind::recv, now, 0.0, t, seg.round);
        for (int j = 0; j < seg.count; ++j) {
          const int layer = seg.first_layer + j;
          const bool gpu = j < seg.gpu_count;
          if (!gpu || !dev.pinned_gpu) now = ensure(seg.device, layer, now, t);
          const double dur = layer_time(seg.device, gpu, t);
          emit(seg.device, gpu ? EventKind::compute_gpu : EventKind::compute_cpu, now, dur, t, seg.round, layer);
          now += dur;
        }
        const double send = send_time(seg);
        emit(seg.device, EventKind::send, now, send, t, seg.round);
        now += send;
        dev.free_at = now;
        ready = now;
        if (opt_.prefetch && !opt_.pessimistic_prefetch) issue_after(seg.device, si, t, now);
      }

      DeviceState& head = devices_[0];
      double now = std::max(ready, head.free_at);
      const int last_round = schedule_.rounds - 1;
      emit(0, EventKind::recv, now, 0.0, t, last_round);
      if (opt_.prefetch && opt_.pessimistic_prefetch && spec_.model.output_bytes > 0) issue_item(0, L_, t, now);
      if (spec_.model.output_bytes > 0) now = ensure(0, L_, now, t);
      const double out = output_time(t);
      emit(0, EventKind::output, now, out, t, last_round, L_);
      now += out;
      head.free_at = now;
      ready = now;
      emitted.push_back(now);
    }
    for (int d = 0; d < M; ++d) advance(d, ready);

    result_.ttft = emitted.front();
    for (std::size_t i = 1; i < emitted.size(); ++i) result_.tpot_series.push_back(emitted[i] - emitted[i - 1]);
    result_.mean_tpot = std::accumulate(result_.tpot_series.begin(), result_.tpot_series.end(), 0.0) /
                        static_cast<double>(result_.tpot_series.size());
    std::stable_sort(result_.events.begin(), result_.events.end(),
                     [](const SimEvent& a, const SimEvent& b) { return a.start < b.start; });
    return std::move(result_);
  }

 private:
  Bytes item_bytes(int item) const { return item == L_ ? spec_.model.output_bytes : spec_.model.layer_bytes; }

  int kv_context(int token) const { return spec_.model.kv_tokens + (opt_.kv_growth ? token : 0); }
  double work_scale(int token) const { return token == 0 ? std::max(1, opt_.prompt_tokens) : 1.0; }

  double layer_time(int device, bool gpu, int token) const {
    const DeviceProfile& d = spec_.devices[device];
    const ModelProfile& m = spec_.model;
    const double bytes = static_cast<double>(m.effective_layer_bytes(kv_context(token)));
    const double scale = work_scale(token);
    if (gpu) return scale * (gpu_layer_flops_time(d, m) + d.kv_copy_gpu) + bytes / d.mem_throughput_gpu;
    return scale * (cpu_layer_flops_time(d, m) + d.kv_copy_cpu) + bytes / d.mem_throughput_cpu;
  }

  double output_time(int token) const {
    const DeviceProfile& d = spec_.devices[0];
    const ModelProfile& m = spec_.model;
    const double io = static_cast<double>(m.input_bytes) / m.vocab_size + static_cast<double>(m.output_bytes);
    return work_scale(token) * output_flops_time(d, m) + io / d.mem_throughput_cpu;
  }

  double send_time(const Segment& seg) const {
    const DeviceProfile& d = spec_.devices[seg.device];
    double t = d.comm_latency;
    if (seg.count > 0 && d.has_gpu() && !d.uma) t += d.ram_to_vram + d.vram_to_ram;
    return t;
  }

  void emit(int device, EventKind kind, double start, double duration, int token, int round, int layer = -1,
            Bytes bytes = 0) {
    result_.events.push_back({device, kind, start, duration, token, round, layer, bytes});
  }

  void count_load(int device, int item, int token) {
    const Bytes b = item_bytes(item);
    result_.disk_bytes_read[device] += b;
    result_.token_disk_bytes[token][device] += b;
    ++result_.layer_loads[token][item];
  }

  void complete(int device) {
    DeviceState& s = devices_[device];
    s.cache.insert(s.flight->item, item_bytes(s.flight->item));
    s.busy_until = s.flight->end;
    s.flight.reset();
  }

  // Runs the prefetch queue up to `now`.
  void advance(int device, double now) {
    DeviceState& s = devices_[device];
    while (true) {
      if (s.flight) {
        if (s.flight->end > now) return;
        complete(device);
        continue;
      }
      if (s.queue.empty()) return;
      const Pending p = s.queue.front();
      const double t0 = std::max(s.busy_until, p.issue);
      if (t0 > now) return;
      s.queue.pop_front();
      if (s.cache.contains(p.item)) continue;
      const double dur = static_cast<double>(item_bytes(p.item)) / s.disk_rate;
      s.flight = Flight{p.item, t0, t0 + dur};
      count_load(device, p.item, p.token);
      emit(device, EventKind::prefetch, t0, dur, p.token, -1, p.item, item_bytes(p.item));
    }
  }

  // Makes `item` resident, returning when it is usable.
  double ensure(int device, int item, double now, int token) {
    DeviceState& s = devices_[device];
    advance(device, now);
    if (s.cache.contains(item)) {
      s.cache.touch(item);
      return now;
    }
    if (s.flight && s.flight->item == item) {
      const double t = s.flight->end;
      complete(device);
      s.cache.touch(item);
      return t;
    }
    s.queue.erase(std::remove_if(s.queue.begin(), s.queue.end(), [&](const Pending& p) { return p.item == item; }),
                  s.queue.end());
    if (s.flight) complete(device);
    const double start = std::max(now, s.busy_until);
    const double dur = static_cast<double>(item_bytes(item)) / s.disk_rate;
    count_load(device, item, token);
    emit(device, EventKind::fault_load, start, dur, token, -1, item, item_bytes(item));
    s.cache.insert(item, item_bytes(item));
    s.busy_until = start + dur;
    return start + dur;
  }

  void issue_item(int device, int item, int token, double now) {
    DeviceState& s = devices_[device];
    for (const Pending& p : s.queue)
      if (p.item == item) return;
    s.queue.push_back({item, now, token});
  }

  void issue_segment(int device, int seg_index, int token, double now) {
    const Segment& seg = schedule_.segments[seg_index];
    const int from = devices_[device].pinned_gpu ? seg.gpu_count : 0;
    for (int j = from; j < seg.count; ++j) issue_item(device, seg.first_layer + j, token, now);
  }

  int first_segment(int device) const {
    const auto& mine = schedule_.by_device[device];
    return mine.empty() ? -1 : mine.front();
  }

  // Prefetches the unit that follows segment `seg_index` on this device.
  void issue_unit(int device, int token, int seg_index, double now) {
    if (seg_index < 0 || token > opt_.decode_tokens) return;
    advance(device, now);
    issue_segment(device, seg_index, token, now);
  }

  void issue_after(int device, int seg_index, int token, double now) {
    const auto& mine = schedule_.by_device[device];
    auto pos = std::find(mine.begin(), mine.end(), seg_index);
    if (pos + 1 != mine.end()) {
      issue_unit(device, token, *(pos + 1), now);
      return;
    }
    if (device == 0) {
      advance(device, now);
      if (spec_.model.output_bytes > 0) issue_item(0, L_, token, now);
    }
    issue_unit(device, token + 1, mine.front(), now);
  }

  const ClusterSpec& spec_;
  SimOptions opt_;
  int L_;
  RingSchedule schedule_;
  std::vector<DeviceState> devices_;
  SimResult result_;
};

}  // namespace

SimResult simulate(const ClusterSpec& spec, const PartitionPlan& plan, const SimOptions& options) {
  return Simulator(spec, plan, options).run();
}

}  // namespace ringplan
