#include "ringplan/plan_io.hpp"

#include <fstream>
#include <sstream>

namespace ringplan {

nlohmann::json plan_to_json(const PartitionPlan& plan, const std::vector<std::string>& removed) {
  nlohmann::json devices = nlohmann::json::array();
  for (std::size_t i = 0; i < plan.w.size(); ++i) {
    nlohmann::json d = {{"id", i < plan.device_ids.size() ? plan.device_ids[i] : std::to_string(i)},
                        {"w", plan.w[i]},
                        {"n", plan.n[i]}};
    if (i < plan.relay.size() && plan.relay[i]) d["relay"] = true;
    if (i < plan.sets.set_of.size()) d["set"] = std::string(to_string(plan.sets.set_of[i]));
    if (i < plan.sets.forced.size() && plan.sets.forced[i]) d["forced"] = true;
    devices.push_back(std::move(d));
  }
  nlohmann::json doc = {{"k", plan.k}, {"objective", plan.objective}, {"devices", std::move(devices)}};
  if (!removed.empty()) doc["removed"] = removed;
  return doc;
}

PartitionPlan plan_from_json(const nlohmann::json& doc, const ClusterSpec& spec) {
  try {
    PartitionPlan p;
    p.k = doc.at("k").get<int>();
    const auto& devices = doc.at("devices");
    if (!devices.is_array() || static_cast<int>(devices.size()) != spec.device_count())
      throw ConfigError("plan lists " + std::to_string(devices.size()) + " devices, config has " +
                        std::to_string(spec.device_count()));
    std::vector<bool> forced;
    for (std::size_t i = 0; i < devices.size(); ++i) {
      const auto& d = devices[i];
      const std::string id = d.at("id").get<std::string>();
      if (id != spec.devices[i].id)
        throw ConfigError("plan device " + std::to_string(i) + " is '" + id + "', config has '" + spec.devices[i].id +
                          "'");
      p.device_ids.push_back(id);
      p.w.push_back(d.at("w").get<int>());
      p.n.push_back(d.at("n").get<int>());
      p.relay.push_back(d.value("relay", false));
      forced.push_back(d.value("forced", false));
    }
    if (p.k < 1) throw ConfigError("plan k must be >= 1");
    for (std::size_t i = 0; i < p.w.size(); ++i)
      if (p.w[i] < 0 || p.n[i] < 0 || p.n[i] > p.w[i])
        throw ConfigError("plan device '" + p.device_ids[i] + "' needs 0 <= n <= w");
    p.sets = classify_devices(spec, p.w, p.n, forced);
    p.objective = evaluate_tpot(spec, p);
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed plan: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("malformed plan: ") + e.what());
  }
}

namespace {

nlohmann::json read_plan_doc(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open plan file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("plan file '" + path + "': " + e.what());
  }
  return doc;
}

}  // namespace

PartitionPlan load_plan(const std::string& path, const ClusterSpec& spec) {
  return plan_from_json(read_plan_doc(path), spec);
}

ClusterSpec without_devices(const ClusterSpec& spec, const std::vector<std::string>& removed) {
  ClusterSpec out = spec;
  for (const std::string& id : removed) {
    const int i = out.index_of(id);
    if (i < 0) throw ConfigError("plan removes unknown device '" + id + "'");
    if (i == 0) throw ConfigError("plan removes the head device '" + id + "'");
    out.devices.erase(out.devices.begin() + i);
    out.relays.erase(id);
  }
  return out;
}

PlanFile load_plan_file(const std::string& path, const ClusterSpec& spec) {
  const nlohmann::json doc = read_plan_doc(path);
  std::vector<std::string> removed;
  try {
    if (doc.contains("removed")) removed = doc.at("removed").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed plan: ") + e.what());
  }
  PlanFile f;
  f.spec = without_devices(spec, removed);
  f.plan = plan_from_json(doc, f.spec);
  return f;
}

}  // namespace ringplan
