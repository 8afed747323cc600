#pragma once

#include "ringplan/latency_model.hpp"

namespace ringplan {

/// Splits layers in proportion to memory_budget + discrete GPU memory (k = 1)
/// and fills each GPU up to its capacity.
PartitionPlan mem_sched(const ClusterSpec& spec);

/// Splits layers in proportion to q4k FLOPS (GPU rate when the device has a
/// GPU), then moves layers that do not fit to devices with free memory, most
/// free first. Whatever still does not fit is spread by CPU FLOPS.
PartitionPlan perf_sched(const ClusterSpec& spec);

/// Layers the device can hold across RAM and GPU memory.
int layer_capacity(const ClusterSpec& spec, int index);

/// Layers the device's GPU can hold.
int gpu_layer_capacity(const ClusterSpec& spec, int index);

}  // namespace ringplan
