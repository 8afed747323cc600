#include "ringplan/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "ringplan/baselines.hpp"
#include "ringplan/halda.hpp"
#include "ringplan/plan_io.hpp"
#include "ringplan/profiles.hpp"
#include "ringplan/prp_sim.hpp"
#include "ringplan/trace.hpp"

namespace ringplan {

namespace {

// Error tagged with the pipeline stage that produced it.
struct StageError : std::runtime_error {
  StageError(std::string stage, const std::string& what) : std::runtime_error(what), stage(std::move(stage)) {}
  std::string stage;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string ms(double seconds) { return fmt("%.3f", seconds * 1e3); }
std::string mib(double bytes) { return fmt("%.1f", bytes / (1024.0 * 1024.0)); }

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s + " " : s + std::string(width - s.size(), ' ');
}

bool verbose() {
  const char* v = std::getenv("RINGPLAN_VERBOSE");
  return v != nullptr && *v != '\0' && std::string(v) != "0";
}

ClusterSpec load_config(const std::string& path) {
  try {
    ClusterSpec spec = load_cluster_spec(path);
    return spec;
  } catch (const ValidationError& e) {
    std::string msg = "invalid config '" + path + "':";
    for (const auto& issue : e.issues()) msg += "\n  - " + issue;
    throw StageError("config", msg);
  } catch (const ConfigError& e) {
    throw StageError("config", e.what());
  }
}

struct Planned {
  ClusterSpec spec;
  PartitionPlan plan;
  std::vector<std::string> removed;
};

Planned make_plan(const ClusterSpec& spec, const std::string& scheduler, bool select, std::ostream& err) {
  try {
    if (scheduler == "mem") return {spec, mem_sched(spec), {}};
    if (scheduler == "perf") return {spec, perf_sched(spec), {}};
    if (scheduler != "halda") throw StageError("args", "unknown scheduler '" + scheduler + "'");
    HaldaResult r = run_halda(spec);
    if (verbose()) {
      err << "halda: iterations=" << r.iterations << " converged=" << (r.converged ? "yes" : "no");
      err << " forced=";
      for (std::size_t i = 0; i < r.forced.size(); ++i) err << (i ? "," : "") << r.forced[i];
      err << "\n";
    }
    if (!select) return {spec, r.plan, {}};
    Selection s = select_devices(spec, r.plan);
    return {s.spec, s.plan, s.removed};
  } catch (const PlanningError& e) {
    std::string msg = e.what();
    for (const auto& reason : e.reasons()) msg += "\n  - " + reason;
    throw StageError("plan", msg);
  } catch (const MissingThroughputError& e) {
    throw StageError("plan", e.what());
  }
}

void print_plan(const Planned& p, const std::string& scheduler, std::ostream& out) {
  const ClusterSpec& spec = p.spec;
  const PartitionPlan& plan = p.plan;
  const LayerCounts counts = layer_counts(plan.w, plan.n, spec.model.layer_count);
  const std::vector<MemoryUsage> usage = estimate_memory_usage(spec, plan);
  const std::vector<std::string> issues = check_plan_feasibility(spec, plan);

  out << "scheduler: " << scheduler << "\n";
  out << "model: " << spec.model.name << " (" << spec.model.layer_count << " layers)\n";
  out << "k: " << plan.k << "\n";
  out << pad("device", 14) << pad("os", 8) << pad("backend", 8) << pad("set", 5) << pad("w", 5) << pad("n", 5)
      << pad("layers", 7) << pad("cpu", 5) << pad("gpu", 5) << pad("ram_MiB", 11) << pad("gpu_MiB", 11)
      << "overloaded\n";
  for (int i = 0; i < spec.device_count(); ++i) {
    const DeviceProfile& d = spec.devices[i];
    const bool relay = i < static_cast<int>(plan.relay.size()) && plan.relay[i];
    std::string set = relay ? "relay" : std::string(to_string(plan.sets.set_of[i]));
    if (!relay && plan.sets.forced[i]) set += "*";
    out << pad(d.id, 14) << pad(std::string(to_string(d.os)), 8) << pad(std::string(to_string(d.backend)), 8)
        << pad(set, 5) << pad(std::to_string(plan.w[i]), 5) << pad(std::to_string(plan.n[i]), 5)
        << pad(std::to_string(counts.layers[i]), 7)
        << pad(std::to_string(counts.layers[i] - counts.gpu_layers[i]), 5)
        << pad(std::to_string(counts.gpu_layers[i]), 5) << pad(mib(static_cast<double>(usage[i].ram_demand)), 11)
        << pad(d.has_gpu() ? mib(static_cast<double>(usage[i].gpu_demand)) : "-", 11)
        << (usage[i].overloaded ? "yes" : "no") << "\n";
  }
  for (const auto& id : p.removed) out << "removed: " << id << "\n";
  out << "analytical TPOT: " << ms(evaluate_tpot(spec, plan)) << " ms\n";
  out << "feasible: " << (issues.empty() ? "yes" : "no") << "\n";
  for (const auto& issue : issues) out << "  - " << issue << "\n";
}

SimResult run_sim(const ClusterSpec& spec, const PartitionPlan& plan, const SimOptions& opt) {
  try {
    return simulate(spec, plan, opt);
  } catch (const SimulationError& e) {
    throw StageError("simulate", e.what());
  } catch (const std::invalid_argument& e) {
    throw StageError("simulate", e.what());
  }
}

void write_file(const std::string& path, const std::string& content, const std::string& stage) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw StageError(stage, "cannot write '" + path + "'");
  f << content;
  if (!f) throw StageError(stage, "failed writing '" + path + "'");
}

// Windows as even as possible summing to L/k, GPUs filled to capacity.
PartitionPlan even_plan(const ClusterSpec& spec, int k) {
  const int M = spec.device_count();
  const int W = spec.model.layer_count / k;
  PartitionPlan p;
  for (const auto& d : spec.devices) p.device_ids.push_back(d.id);
  p.w.assign(M, W / M);
  for (int i = 0; i < W % M; ++i) ++p.w[i];
  p.n.assign(M, 0);
  for (int i = 0; i < M; ++i) p.n[i] = std::min(p.w[i], gpu_layer_capacity(spec, i) / k);
  p.relay.assign(M, false);
  p.k = k;
  p.sets = classify_devices(spec, p.w, p.n);
  p.objective = evaluate_tpot(spec, p);
  return p;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Layer-to-device planner and pipelined-ring simulator", "ringplan"};
  app.require_subcommand(1);

  std::string config, scheduler = "halda", plan_path, plan_out, trace_path, trace_format = "csv", mode = "prp";
  bool no_select = false, no_prefetch = false, pessimistic = false, no_cliff = false, kv_growth = false;
  int tokens = 16, prompt_tokens = 1;

  auto* plan_cmd = app.add_subcommand("plan", "Compute a layer assignment");
  plan_cmd->add_option("--config", config, "Cluster config (JSON)")->required();
  plan_cmd->add_option("--scheduler", scheduler, "halda, mem or perf")
      ->check(CLI::IsMember({"halda", "mem", "perf"}));
  plan_cmd->add_flag("--no-select", no_select, "Skip device selection");
  plan_cmd->add_option("--output", plan_out, "Write the plan as JSON");

  auto* sim_cmd = app.add_subcommand("simulate", "Replay a plan in the ring simulator");
  sim_cmd->add_option("--config", config, "Cluster config (JSON)")->required();
  auto* plan_opt = sim_cmd->add_option("--plan", plan_path, "Plan file written by `plan --output`");
  sim_cmd->add_option("--scheduler", scheduler, "halda, mem or perf")
      ->check(CLI::IsMember({"halda", "mem", "perf"}))
      ->excludes(plan_opt);
  sim_cmd->add_flag("--no-select", no_select, "Skip device selection");
  sim_cmd->add_option("--tokens", tokens, "Decode tokens")->required()->check(CLI::PositiveNumber);
  sim_cmd->add_option("--prompt-tokens", prompt_tokens, "Prompt length of the prefill pass")
      ->check(CLI::PositiveNumber);
  sim_cmd->add_option("--mode", mode, "pp or prp")->check(CLI::IsMember({"pp", "prp"}));
  sim_cmd->add_flag("--no-prefetch", no_prefetch, "Disable prefetching");
  sim_cmd->add_flag("--pessimistic-prefetch", pessimistic, "Prefetch only once a segment's input arrives");
  sim_cmd->add_flag("--no-metal-cliff", no_cliff, "Plain LRU on overloaded Metal devices");
  sim_cmd->add_flag("--kv-growth", kv_growth, "Grow the KV context per generated token");
  sim_cmd->add_option("--trace", trace_path, "Write the event timeline");
  sim_cmd->add_option("--trace-format", trace_format, "csv or trace-event")
      ->check(CLI::IsMember({"csv", "trace-event"}));

  auto* cmp_cmd = app.add_subcommand("compare", "Plan and simulate with every scheduler");
  cmp_cmd->add_option("--config", config, "Cluster config (JSON)")->required();
  cmp_cmd->add_option("--tokens", tokens, "Decode tokens")->required()->check(CLI::PositiveNumber);

  auto* sweep_cmd = app.add_subcommand("sweep-k", "Simulate even windows for every valid k");
  sweep_cmd->add_option("--config", config, "Cluster config (JSON)")->required();
  sweep_cmd->add_option("--tokens", tokens, "Decode tokens")->required()->check(CLI::PositiveNumber);

  auto* val_cmd = app.add_subcommand("validate", "Check a cluster config");
  val_cmd->add_option("--config", config, "Cluster config (JSON)")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error [args]: " << e.what() << "\n";
    return 1;
  }

  try {
    if (val_cmd->parsed()) {
      const ClusterSpec spec = load_config(config);
      out << "config ok: " << spec.device_count() << " devices, model " << spec.model.name << " ("
          << spec.model.layer_count << " layers)\n";
      for (int i = 0; i < spec.device_count(); ++i)
        out << "  " << pad(spec.devices[i].id, 14) << "budget " << mib(static_cast<double>(memory_budget(spec.devices[i])))
            << " MiB\n";
      return 0;
    }

    if (plan_cmd->parsed()) {
      const ClusterSpec spec = load_config(config);
      const Planned p = make_plan(spec, scheduler, !no_select, err);
      print_plan(p, scheduler, out);
      if (!plan_out.empty()) write_file(plan_out, plan_to_json(p.plan, p.removed).dump(2) + "\n", "plan");
      return 0;
    }

    if (sim_cmd->parsed()) {
      const ClusterSpec config_spec = load_config(config);
      Planned p;
      if (!plan_path.empty()) {
        try {
          PlanFile f = load_plan_file(plan_path, config_spec);
          p = {f.spec, f.plan, {}};
        } catch (const ConfigError& e) {
          throw StageError("plan", e.what());
        }
      } else {
        p = make_plan(config_spec, scheduler, !no_select, err);
      }
      SimOptions opt;
      opt.mode = mode == "pp" ? SimMode::pp : SimMode::prp;
      opt.prefetch = !no_prefetch;
      opt.pessimistic_prefetch = pessimistic;
      opt.metal_cliff = !no_cliff;
      opt.kv_growth = kv_growth;
      opt.prompt_tokens = prompt_tokens;
      opt.decode_tokens = tokens;
      const SimResult r = run_sim(p.spec, p.plan, opt);
      out << "mode: " << mode << "  prefetch: " << (opt.prefetch ? (pessimistic ? "pessimistic" : "on") : "off")
          << "  rounds: " << r.rounds << "\n";
      out << "TTFT: " << ms(r.ttft) << " ms\n";
      out << "mean TPOT: " << ms(r.mean_tpot) << " ms\n";
      out << pad("device", 14) << pad("disk_read_MiB", 15) << pad("per_token_MiB", 15) << "cache_MiB\n";
      for (int i = 0; i < p.spec.device_count(); ++i) {
        const double per_token = static_cast<double>(r.token_disk_bytes.back()[i]);
        out << pad(p.spec.devices[i].id, 14) << pad(mib(static_cast<double>(r.disk_bytes_read[i])), 15)
            << pad(mib(per_token), 15) << mib(static_cast<double>(r.cache_capacity[i])) << "\n";
      }
      if (!trace_path.empty()) {
        try {
          write_file(trace_path, export_trace(r, parse_trace_format(trace_format)), "trace");
        } catch (const std::invalid_argument& e) {
          throw StageError("trace", e.what());
        }
      }
      return 0;
    }

    if (cmp_cmd->parsed()) {
      const ClusterSpec spec = load_config(config);
      SimOptions opt;
      opt.decode_tokens = tokens;
      out << pad("scheduler", 11) << pad("k", 4) << pad("devices", 9) << pad("feasible", 10) << pad("analytic_ms", 14)
          << pad("sim_tpot_ms", 14) << "ttft_ms\n";
      for (const std::string s : {"halda", "mem", "perf"}) {
        const Planned p = make_plan(spec, s, true, err);
        const bool feasible = check_plan_feasibility(p.spec, p.plan).empty();
        const SimResult r = run_sim(p.spec, p.plan, opt);
        out << pad(s, 11) << pad(std::to_string(p.plan.k), 4) << pad(std::to_string(p.spec.device_count()), 9)
            << pad(feasible ? "yes" : "no", 10) << pad(ms(evaluate_tpot(p.spec, p.plan)), 14)
            << pad(ms(r.mean_tpot), 14) << ms(r.ttft) << "\n";
      }
      return 0;
    }

    if (sweep_cmd->parsed()) {
      const ClusterSpec spec = load_config(config);
      SimOptions opt;
      opt.decode_tokens = tokens;
      out << pad("k", 5) << pad("W", 6) << pad("analytic_ms", 14) << pad("sim_tpot_ms", 14) << "disk_MiB_per_token\n";
      for (int k : valid_factors(spec.model.layer_count)) {
        if (spec.model.layer_count / k < spec.device_count()) continue;
        const PartitionPlan p = even_plan(spec, k);
        const SimResult r = run_sim(spec, p, opt);
        double disk = 0.0;
        for (Bytes b : r.token_disk_bytes.back()) disk += static_cast<double>(b);
        out << pad(std::to_string(k), 5) << pad(std::to_string(spec.model.layer_count / k), 6)
            << pad(ms(p.objective), 14) << pad(ms(r.mean_tpot), 14) << mib(disk) << "\n";
      }
      return 0;
    }
  } catch (const StageError& e) {
    err << "error [" << e.stage << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error [internal]: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace ringplan
