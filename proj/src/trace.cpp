#include "ringplan/trace.hpp"

#include <cstdio>
#include <stdexcept>

#include <json.hpp>

namespace ringplan {

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string device_name(const SimResult& r, int device) {
  return device < static_cast<int>(r.device_ids.size()) ? r.device_ids[device] : std::to_string(device);
}

}  // namespace

TraceFormat parse_trace_format(std::string_view tag) {
  if (tag == "csv") return TraceFormat::csv;
  if (tag == "trace-event") return TraceFormat::trace_event;
  throw std::invalid_argument("unknown trace format '" + std::string(tag) + "' (expected csv or trace-event)");
}

std::string export_trace(const SimResult& result, TraceFormat format) {
  if (format == TraceFormat::csv) {
    std::string out = "device,kind,token,round,start_s,duration_s\n";
    for (const SimEvent& e : result.events) {
      out += device_name(result, e.device);
      out += ',';
      out += to_string(e.kind);
      out += ',' + std::to_string(e.token) + ',' + std::to_string(e.round) + ',';
      out += fixed(e.start, 9) + ',' + fixed(e.duration, 9) + '\n';
    }
    return out;
  }

  nlohmann::json events = nlohmann::json::array();
  for (std::size_t d = 0; d < result.device_ids.size(); ++d)
    events.push_back({{"name", "process_name"},
                      {"ph", "M"},
                      {"pid", d},
                      {"tid", 0},
                      {"args", {{"name", result.device_ids[d]}}}});
  for (const SimEvent& e : result.events) {
    const bool disk = e.kind == EventKind::prefetch || e.kind == EventKind::fault_load;
    nlohmann::json args = {{"token", e.token}, {"round", e.round}};
    if (e.layer >= 0) args["layer"] = e.layer;
    if (e.bytes > 0) args["bytes"] = e.bytes;
    events.push_back({{"name", std::string(to_string(e.kind))},
                      {"ph", "X"},
                      {"pid", e.device},
                      {"tid", disk ? 1 : 0},
                      {"ts", e.start * 1e6},
                      {"dur", e.duration * 1e6},
                      {"args", std::move(args)}});
  }
  return events.dump(1) + "\n";
}

}  // namespace ringplan
