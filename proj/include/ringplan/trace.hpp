#pragma once

#include <string>
#include <string_view>

#include "ringplan/prp_sim.hpp"

namespace ringplan {

enum class TraceFormat { csv, trace_event };

/// Accepts "csv" and "trace-event".
TraceFormat parse_trace_format(std::string_view tag);

/// CSV columns: device,kind,token,round,start_s,duration_s. The trace-event
/// form is a Chrome/Perfetto JSON array of complete ("X") events with one
/// process lane per device.
std::string export_trace(const SimResult& result, TraceFormat format);

}  // namespace ringplan
