#include "ringplan/profiles.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace ringplan {

using nlohmann::json;

std::string_view to_string(QuantFormat q) {
  switch (q) {
    case QuantFormat::q4k: return "q4k";
    case QuantFormat::q5k: return "q5k";
    case QuantFormat::q6k: return "q6k";
    case QuantFormat::q80: return "q80";
    case QuantFormat::fp16: return "fp16";
    case QuantFormat::fp32: return "fp32";
  }
  return "?";
}

std::optional<QuantFormat> parse_quant(std::string_view tag) {
  for (QuantFormat q : kAllQuantFormats)
    if (to_string(q) == tag) return q;
  return std::nullopt;
}

std::string_view to_string(OsKind os) {
  switch (os) {
    case OsKind::macos: return "macos";
    case OsKind::linux: return "linux";
    case OsKind::android: return "android";
  }
  return "?";
}

std::string_view to_string(Backend backend) {
  switch (backend) {
    case Backend::none: return "none";
    case Backend::cuda: return "cuda";
    case Backend::metal: return "metal";
  }
  return "?";
}

double DeviceProfile::disk_read_throughput() const {
  return os == OsKind::macos ? disk_rand_read : disk_seq_read;
}

Bytes DeviceProfile::swapout_capacity() const {
  if (os != OsKind::android) return 0;
  return std::max<Bytes>(0, std::min(bytes_can_swap, swap_available));
}

int ClusterSpec::index_of(std::string_view id) const {
  for (std::size_t i = 0; i < devices.size(); ++i)
    if (devices[i].id == id) return static_cast<int>(i);
  return -1;
}

namespace {

std::string join_issues(const std::vector<std::string>& issues) {
  std::string out = "invalid cluster config:";
  for (const auto& s : issues) out += "\n  - " + s;
  return out;
}

// Field reader that records problems instead of throwing, so one pass over a
// document reports everything that is wrong with it.
class Reader {
 public:
  Reader(const json& obj, std::string where, std::vector<std::string>& issues)
      : obj_(obj), where_(std::move(where)), issues_(issues) {}

  bool has(const char* key) const { return obj_.contains(key); }

  std::string str(const char* key) {
    seen_.insert(key);
    if (!obj_.contains(key)) return missing(key), std::string{};
    const json& v = obj_.at(key);
    if (!v.is_string()) return bad(key, "must be a string"), std::string{};
    return v.get<std::string>();
  }

  double num(const char* key, bool required = true) {
    seen_.insert(key);
    if (!obj_.contains(key)) {
      if (required) missing(key);
      return 0.0;
    }
    const json& v = obj_.at(key);
    if (!v.is_number()) return bad(key, "must be a number"), 0.0;
    return v.get<double>();
  }

  std::int64_t integer(const char* key, bool required = true) {
    seen_.insert(key);
    if (!obj_.contains(key)) {
      if (required) missing(key);
      return 0;
    }
    const json& v = obj_.at(key);
    if (v.is_number_integer()) return v.get<std::int64_t>();
    if (v.is_number_float()) {
      double d = v.get<double>();
      if (std::floor(d) == d && std::fabs(d) < 9.0e18) return static_cast<std::int64_t>(d);
    }
    bad(key, "must be an integer");
    return 0;
  }

  bool boolean(const char* key) {
    seen_.insert(key);
    if (!obj_.contains(key)) return missing(key), false;
    const json& v = obj_.at(key);
    if (!v.is_boolean()) return bad(key, "must be true or false"), false;
    return v.get<bool>();
  }

  QuantMap quant_map(const char* key, bool required = true) {
    seen_.insert(key);
    QuantMap out;
    if (!obj_.contains(key)) {
      if (required) missing(key);
      return out;
    }
    const json& v = obj_.at(key);
    if (!v.is_object()) return bad(key, "must be an object keyed by quant format"), out;
    for (auto it = v.begin(); it != v.end(); ++it) {
      auto q = parse_quant(it.key());
      if (!q) {
        bad(key, "unknown quant format '" + it.key() + "'");
        continue;
      }
      if (!it.value().is_number()) {
        bad(key, "entry '" + it.key() + "' must be a number");
        continue;
      }
      out[*q] = it.value().get<double>();
    }
    return out;
  }

  void mark(const char* key) { seen_.insert(key); }

  void reject_unknown() {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!seen_.count(it.key())) issues_.push_back(where_ + ": unknown field '" + it.key() + "'");
  }

  void bad(const std::string& key, const std::string& why) {
    issues_.push_back(where_ + ": " + key + " " + why);
  }

 private:
  void missing(const std::string& key) { issues_.push_back(where_ + ": missing field '" + key + "'"); }

  const json& obj_;
  std::string where_;
  std::vector<std::string>& issues_;
  std::set<std::string> seen_;
};

DeviceProfile read_device(const json& obj, std::size_t index, std::vector<std::string>& issues) {
  DeviceProfile d;
  std::string where = "devices[" + std::to_string(index) + "]";
  if (obj.contains("id") && obj.at("id").is_string())
    where = "device '" + obj.at("id").get<std::string>() + "'";
  Reader r(obj, where, issues);

  d.id = r.str("id");
  std::string os = r.str("os");
  if (os == "macos") d.os = OsKind::macos;
  else if (os == "linux") d.os = OsKind::linux;
  else if (os == "android" || os == "harmonyos") d.os = OsKind::android;
  else if (!os.empty()) r.bad("os", "must be one of macos, linux, android (got '" + os + "')");

  d.uma = r.boolean("uma");
  std::string backend = r.str("backend");
  if (backend == "none") d.backend = Backend::none;
  else if (backend == "cuda") d.backend = Backend::cuda;
  else if (backend == "metal") d.backend = Backend::metal;
  else if (!backend.empty()) r.bad("backend", "must be one of none, cuda, metal (got '" + backend + "')");

  // Backend- and OS-specific fields are read if present; validate() decides
  // whether their presence is allowed.
  d.cpu_flops = r.quant_map("cpu_flops");
  d.gpu_flops = r.quant_map("gpu_flops", false);
  d.mem_throughput_cpu = r.num("mem_throughput_cpu");
  d.mem_throughput_gpu = r.num("mem_throughput_gpu", false);
  d.kv_copy_cpu = r.num("kv_copy_cpu");
  d.kv_copy_gpu = r.num("kv_copy_gpu", false);
  d.ram_to_vram = r.num("ram_to_vram", false);
  d.vram_to_ram = r.num("vram_to_ram", false);
  d.comm_latency = r.num("comm_latency");
  d.disk_seq_read = r.num("disk_seq_read");
  d.disk_rand_read = r.num("disk_rand_read");
  d.ram_available = r.integer("ram_available");
  d.metal_working_set = r.integer("metal_working_set", false);
  d.vram_available = r.integer("vram_available", false);
  d.swap_available = r.integer("swap_available", false);
  d.bytes_can_swap = r.integer("bytes_can_swap", false);

  // Presence flags for the optional fields, consumed by the applicability check.
  auto present = [&](const char* key) { return obj.contains(key); };
  const bool gpu = d.backend != Backend::none;
  const bool copies = gpu && !d.uma;
  auto require_iff = [&](const char* key, bool applies, const std::string& when) {
    if (applies && !present(key)) issues.push_back(where + ": missing field '" + key + "' (required " + when + ")");
    if (!applies && present(key)) issues.push_back(where + ": field '" + key + "' does not apply (only " + when + ")");
  };
  require_iff("gpu_flops", gpu, "when backend is cuda or metal");
  require_iff("mem_throughput_gpu", gpu, "when backend is cuda or metal");
  require_iff("kv_copy_gpu", gpu, "when backend is cuda or metal");
  require_iff("ram_to_vram", copies, "for a discrete GPU (backend set, uma=false)");
  require_iff("vram_to_ram", copies, "for a discrete GPU (backend set, uma=false)");
  require_iff("metal_working_set", d.backend == Backend::metal, "when backend is metal");
  require_iff("vram_available", d.backend == Backend::cuda, "when backend is cuda");
  require_iff("swap_available", d.os == OsKind::android, "on android");
  require_iff("bytes_can_swap", d.os == OsKind::android, "on android");

  r.reject_unknown();
  return d;
}

ModelProfile read_model(const json& obj, std::vector<std::string>& issues) {
  ModelProfile m;
  Reader r(obj, "model", issues);
  m.name = r.str("name");
  m.layer_count = static_cast<int>(r.integer("layer_count"));
  m.layer_flops = r.quant_map("layer_flops");
  m.output_flops = r.quant_map("output_flops");
  m.layer_bytes = r.integer("layer_bytes");
  m.input_bytes = r.integer("input_bytes");
  m.output_bytes = r.integer("output_bytes");
  m.kv_heads = static_cast<int>(r.integer("kv_heads"));
  m.v_heads = static_cast<int>(r.integer("v_heads"));
  m.kv_head_dim = static_cast<int>(r.integer("kv_head_dim"));
  m.v_head_dim = static_cast<int>(r.integer("v_head_dim"));
  m.embed_dim = static_cast<int>(r.integer("embed_dim"));
  m.vocab_size = static_cast<int>(r.integer("vocab_size"));
  m.kv_tokens = static_cast<int>(r.integer("kv_tokens"));
  m.cpu_buffer = r.integer("cpu_buffer");
  m.gpu_buffer = r.integer("gpu_buffer");
  r.reject_unknown();
  return m;
}

json quant_json(const QuantMap& m) {
  json out = json::object();
  for (const auto& [q, v] : m) out[std::string(to_string(q))] = v;
  return out;
}

}  // namespace

ValidationError::ValidationError(std::vector<std::string> issues)
    : ConfigError(join_issues(issues)), issues_(std::move(issues)) {}

std::vector<std::string> validate(const ClusterSpec& spec) {
  std::vector<std::string> issues;
  auto add = [&](const std::string& s) { issues.push_back(s); };

  const ModelProfile& m = spec.model;
  if (m.layer_count < 1) add("model: layer_count must be >= 1");
  if (m.layer_bytes <= 0) add("model: layer_bytes must be > 0");
  if (m.vocab_size < 1) add("model: vocab_size must be >= 1");
  for (auto [name, v] : {std::pair{"input_bytes", m.input_bytes}, {"output_bytes", m.output_bytes},
                         {"cpu_buffer", m.cpu_buffer}, {"gpu_buffer", m.gpu_buffer}})
    if (v < 0) add(std::string("model: ") + name + " must be >= 0");
  for (auto [name, v] : {std::pair{"kv_heads", m.kv_heads}, {"v_heads", m.v_heads},
                         {"kv_head_dim", m.kv_head_dim}, {"v_head_dim", m.v_head_dim},
                         {"embed_dim", m.embed_dim}, {"kv_tokens", m.kv_tokens}})
    if (v < 0) add(std::string("model: ") + name + " must be >= 0");
  for (const auto& [q, v] : m.layer_flops)
    if (v < 0) add("model: layer_flops." + std::string(to_string(q)) + " must be >= 0");
  for (const auto& [q, v] : m.output_flops)
    if (v < 0) add("model: output_flops." + std::string(to_string(q)) + " must be >= 0");

  if (spec.devices.empty()) add("devices: at least one device is required");
  if (!(spec.disk_speed_threshold > 0.0)) add("disk_speed_threshold must be > 0");

  std::set<std::string> ids;
  for (const DeviceProfile& d : spec.devices) {
    const std::string where = "device '" + d.id + "'";
    if (d.id.empty()) add("device with empty id");
    if (!ids.insert(d.id).second) add(where + ": duplicate id");
    if (d.backend == Backend::metal && d.os != OsKind::macos) add(where + ": backend metal requires os macos");
    if (d.backend == Backend::cuda && d.os == OsKind::macos) add(where + ": backend cuda is not modeled on macos");
    if (d.uma && d.backend == Backend::cuda) add(where + ": uma=true requires backend metal or none");

    auto positive = [&](const char* field, double v) {
      if (!(v > 0.0) || !std::isfinite(v)) add(where + ": " + field + " must be > 0");
    };
    positive("mem_throughput_cpu", d.mem_throughput_cpu);
    positive("kv_copy_cpu", d.kv_copy_cpu);
    positive("comm_latency", d.comm_latency);
    positive("disk_seq_read", d.disk_seq_read);
    positive("disk_rand_read", d.disk_rand_read);
    if (d.ram_available < 0) add(where + ": ram_available must be >= 0");
    for (const auto& [q, v] : d.cpu_flops)
      if (!(v > 0.0)) add(where + ": cpu_flops." + std::string(to_string(q)) + " must be > 0");

    if (d.has_gpu()) {
      positive("mem_throughput_gpu", d.mem_throughput_gpu);
      positive("kv_copy_gpu", d.kv_copy_gpu);
      for (const auto& [q, v] : d.gpu_flops)
        if (!(v > 0.0)) add(where + ": gpu_flops." + std::string(to_string(q)) + " must be > 0");
      if (!d.uma) {
        positive("ram_to_vram", d.ram_to_vram);
        positive("vram_to_ram", d.vram_to_ram);
      }
    } else if (!d.gpu_flops.empty()) {
      add(where + ": gpu_flops given but backend is none");
    }
    if (d.metal() && d.metal_working_set <= 0) add(where + ": metal_working_set must be > 0");
    if (d.cuda() && d.vram_available < 0) add(where + ": vram_available must be >= 0");
    if (d.os == OsKind::android) {
      if (d.swap_available < 0) add(where + ": swap_available must be >= 0");
      if (d.bytes_can_swap < 0) add(where + ": bytes_can_swap must be >= 0");
    }

    for (const auto& [q, f] : m.layer_flops) {
      if (f <= 0.0) continue;
      if (!d.cpu_flops.count(q)) add(where + ": cpu_flops has no entry for " + std::string(to_string(q)));
      if (d.has_gpu() && !d.gpu_flops.count(q))
        add(where + ": gpu_flops has no entry for " + std::string(to_string(q)));
    }
  }
  if (!spec.devices.empty()) {
    for (const auto& [q, f] : m.output_flops)
      if (f > 0.0 && !spec.devices.front().cpu_flops.count(q))
        add("device '" + spec.devices.front().id + "': cpu_flops has no entry for output format " +
            std::string(to_string(q)));
  }
  for (const std::string& r : spec.relays)
    if (!ids.count(r)) add("relays: unknown device id '" + r + "'");
  return issues;
}

ClusterSpec parse_cluster_spec(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ParseError("cluster config must be a JSON object");
  std::vector<std::string> issues;
  ClusterSpec spec;
  Reader top(doc, "config", issues);

  top.mark("model");
  if (!doc.contains("model") || !doc.at("model").is_object())
    issues.push_back("config: missing object 'model'");
  else
    spec.model = read_model(doc.at("model"), issues);

  top.mark("devices");
  if (!doc.contains("devices") || !doc.at("devices").is_array()) {
    issues.push_back("config: missing array 'devices'");
  } else {
    const json& arr = doc.at("devices");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      if (!arr[i].is_object()) {
        issues.push_back("devices[" + std::to_string(i) + "]: must be an object");
        continue;
      }
      spec.devices.push_back(read_device(arr[i], i, issues));
    }
  }

  spec.disk_speed_threshold = top.num("disk_speed_threshold");
  top.mark("relays");
  if (doc.contains("relays")) {
    const json& rel = doc.at("relays");
    if (!rel.is_array()) {
      issues.push_back("config: relays must be an array of device ids");
    } else {
      for (const json& r : rel) {
        if (r.is_string()) spec.relays.insert(r.get<std::string>());
        else issues.push_back("config: relays entries must be strings");
      }
    }
  }
  top.reject_unknown();

  // Structural problems make invariant checks noisy; report them alone.
  if (!issues.empty()) throw ValidationError(std::move(issues));
  auto invariant_issues = validate(spec);
  if (!invariant_issues.empty()) throw ValidationError(std::move(invariant_issues));
  return spec;
}

ClusterSpec parse_cluster_spec_text(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed config: ") + e.what());
  }
  return parse_cluster_spec(doc);
}

ClusterSpec load_cluster_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_cluster_spec_text(buf.str());
}

json to_json(const DeviceProfile& d) {
  json j;
  j["id"] = d.id;
  j["os"] = std::string(to_string(d.os));
  j["uma"] = d.uma;
  j["backend"] = std::string(to_string(d.backend));
  j["cpu_flops"] = quant_json(d.cpu_flops);
  j["mem_throughput_cpu"] = d.mem_throughput_cpu;
  j["kv_copy_cpu"] = d.kv_copy_cpu;
  if (d.has_gpu()) {
    j["gpu_flops"] = quant_json(d.gpu_flops);
    j["mem_throughput_gpu"] = d.mem_throughput_gpu;
    j["kv_copy_gpu"] = d.kv_copy_gpu;
    if (!d.uma) {
      j["ram_to_vram"] = d.ram_to_vram;
      j["vram_to_ram"] = d.vram_to_ram;
    }
  }
  j["comm_latency"] = d.comm_latency;
  j["disk_seq_read"] = d.disk_seq_read;
  j["disk_rand_read"] = d.disk_rand_read;
  j["ram_available"] = d.ram_available;
  if (d.metal()) j["metal_working_set"] = d.metal_working_set;
  if (d.cuda()) j["vram_available"] = d.vram_available;
  if (d.os == OsKind::android) {
    j["swap_available"] = d.swap_available;
    j["bytes_can_swap"] = d.bytes_can_swap;
  }
  return j;
}

json to_json(const ModelProfile& m) {
  json j;
  j["name"] = m.name;
  j["layer_count"] = m.layer_count;
  j["layer_flops"] = quant_json(m.layer_flops);
  j["output_flops"] = quant_json(m.output_flops);
  j["layer_bytes"] = m.layer_bytes;
  j["input_bytes"] = m.input_bytes;
  j["output_bytes"] = m.output_bytes;
  j["kv_heads"] = m.kv_heads;
  j["v_heads"] = m.v_heads;
  j["kv_head_dim"] = m.kv_head_dim;
  j["v_head_dim"] = m.v_head_dim;
  j["embed_dim"] = m.embed_dim;
  j["vocab_size"] = m.vocab_size;
  j["kv_tokens"] = m.kv_tokens;
  j["cpu_buffer"] = m.cpu_buffer;
  j["gpu_buffer"] = m.gpu_buffer;
  return j;
}

json to_json(const ClusterSpec& spec) {
  json j;
  j["model"] = to_json(spec.model);
  j["devices"] = json::array();
  for (const auto& d : spec.devices) j["devices"].push_back(to_json(d));
  j["disk_speed_threshold"] = spec.disk_speed_threshold;
  j["relays"] = json::array();
  for (const auto& r : spec.relays) j["relays"].push_back(r);
  return j;
}

Bytes memory_budget(const DeviceProfile& d) {
  switch (d.os) {
    case OsKind::macos: return d.metal() ? d.metal_working_set : d.ram_available;
    case OsKind::linux: return d.ram_available;
    case OsKind::android: return d.ram_available + d.swap_available;
  }
  return d.ram_available;
}

Bytes discrete_gpu_budget(const DeviceProfile& d) {
  return d.cuda() ? d.vram_available : 0;
}

}  // namespace ringplan
