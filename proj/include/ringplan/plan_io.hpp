#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "ringplan/latency_model.hpp"

namespace ringplan {

/// `removed` lists config devices the plan dropped from the ring.
nlohmann::json plan_to_json(const PartitionPlan& plan, const std::vector<std::string>& removed = {});

/// Reads a plan written by plan_to_json. Device ids must match the spec's
/// devices in ring order; sets are recomputed from the spec.
PartitionPlan plan_from_json(const nlohmann::json& doc, const ClusterSpec& spec);
PartitionPlan load_plan(const std::string& path, const ClusterSpec& spec);

/// The config minus the devices a plan file marks as removed.
ClusterSpec without_devices(const ClusterSpec& spec, const std::vector<std::string>& removed);

struct PlanFile {
  ClusterSpec spec;  // pruned to the plan's devices
  PartitionPlan plan;
};
PlanFile load_plan_file(const std::string& path, const ClusterSpec& spec);

}  // namespace ringplan
