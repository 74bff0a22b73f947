// moesim: trace generation, simulation, sweeps, weight calibration and
// importance-proxy validation for mixed-precision MoE expert offloading.
//
// Exit codes: 0 success, 1 usage error, 2 input-contract violation.

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "moesim/moesim.hpp"

namespace fs = std::filesystem;
using namespace moesim;

namespace {

struct Overrides {
  std::optional<std::string> policy;
  std::optional<bool> dynamic_loading;
  std::optional<bool> prefetch;
  std::optional<std::size_t> lookahead;
  std::optional<double> t1, t2;
  std::optional<std::size_t> cap_high, cap_low;
  std::optional<std::uint64_t> seed;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--policy", policy, "Cache policy: random|lru|lfu|lhu|fld|weighted");
    cmd->add_option("--dynamic-loading", dynamic_loading, "Mixed-precision loading on/off");
    cmd->add_option("--prefetch", prefetch, "Lookahead prefetching on/off");
    cmd->add_option("--lookahead", lookahead, "Prefetch lookahead depth p");
    cmd->add_option("--t1", t1, "High/low threshold");
    cmd->add_option("--t2", t2, "Low/skip threshold");
    cmd->add_option("--cap-high", cap_high, "High-precision pool capacity (experts)");
    cmd->add_option("--cap-low", cap_low, "Low-precision pool capacity (experts)");
    cmd->add_option("--seed", seed, "Run seed (Random policy)");
  }

  void apply(RunConfig& c) const {
    if (policy) c.cache.policy = parse_policy(*policy);
    if (dynamic_loading) c.dynamic_loading = *dynamic_loading;
    if (prefetch) c.prefetching = *prefetch;
    if (lookahead) c.lookahead = *lookahead;
    if (t1) c.thresholds.t1 = *t1;
    if (t2) c.thresholds.t2 = *t2;
    if (cap_high) c.cache.cap_high = *cap_high;
    if (cap_low) c.cache.cap_low = *cap_low;
    if (seed) c.seed = *seed;
  }
};

TraceEncoding parse_encoding(const std::string& s) {
  if (s == "jsonl") return TraceEncoding::JsonLines;
  if (s == "binary" || s == "bin") return TraceEncoding::Binary;
  throw InputError("unknown trace format '" + s + "' (jsonl|binary)");
}

RunConfig load_config_or_default(const std::string& path) {
  return path.empty() ? RunConfig{} : load_run_config(path);
}

int cmd_gen_trace(const std::string& spec_path, const std::string& out, const std::string& format,
                  std::optional<std::uint64_t> seed) {
  TraceSpec spec = load_trace_spec(spec_path);
  if (seed) spec.seed = *seed;
  const Trace trace = generate(spec);
  save_trace(out, trace, parse_encoding(format));
  std::cout << "wrote " << out << ": " << trace.sequences.size() << " sequences, "
            << trace.token_count() << " tokens\n";
  return 0;
}

int cmd_convert(const std::string& in, const std::string& out, const std::string& format) {
  save_trace(out, load_trace(in), parse_encoding(format));
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_simulate(const std::string& config_path, const std::string& trace_path,
                 const std::string& out_dir, const Overrides& ov, bool events) {
  RunConfig cfg = load_config_or_default(config_path);
  ov.apply(cfg);
  cfg.collect_events = events;
  const Trace trace = load_trace(trace_path);
  const SimReport report = simulate(trace, cfg);

  RunManifest m{"simulate", config_path, trace_path, out_dir};
  m.seed = cfg.seed;
  m.digest_inputs();
  const fs::path dir(out_dir);
  write_text_file(dir / "summary.json", report_json(report, cfg, m).dump(2) + "\n");
  std::ostringstream tokens, layers;
  write_token_csv(tokens, report, m);
  write_layer_csv(layers, report, m);
  write_text_file(dir / "tokens.csv", tokens.str());
  write_text_file(dir / "layers.csv", layers.str());
  if (events) {
    std::ostringstream ev;
    write_event_csv(ev, report, m);
    write_text_file(dir / "events.csv", ev.str());
  }
  std::cout << summary_json(report).dump(2) << "\n";
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& trace_path,
              const std::string& axis_spec, const std::string& out, const Overrides& ov) {
  RunConfig cfg = load_config_or_default(config_path);
  ov.apply(cfg);
  const SweepAxis axis = parse_axis(axis_spec);
  const Trace trace = load_trace(trace_path);
  const auto points = run_sweep(trace, cfg, axis);

  RunManifest m{"sweep", config_path, trace_path, out};
  m.seed = cfg.seed;
  m.extra = axis_spec;
  m.digest_inputs();
  std::ostringstream csv;
  csv << "# moesim manifest " << m.hash() << '\n' << kSweepCsvHeader << '\n';
  for (const auto& p : points) write_sweep_row(csv, axis.name, p.value, p.report);
  write_text_file(out, csv.str());
  std::cout << csv.str();
  return 0;
}

int cmd_calibrate(const std::string& config_path, const std::string& trace_path, double grid_step,
                  const std::string& out_dir, const Overrides& ov) {
  RunConfig cfg = load_config_or_default(config_path);
  ov.apply(cfg);
  const Trace trace = load_trace(trace_path);
  const Calibration cal = calibrate_weights(trace, cfg, grid_step);

  RunManifest m{"calibrate", config_path, trace_path, out_dir};
  m.seed = cfg.seed;
  m.extra = "grid_step=" + fmt_num(grid_step);
  m.digest_inputs();
  const fs::path dir(out_dir);
  json w{{"schema", "moesim-weights"},
         {"schema_version", kReportSchemaVersion},
         {"manifest", m.to_json()},
         {"grid_step", grid_step},
         {"grid_points", cal.grid.size()},
         {"weights", cal.best},
         {"total_miss_penalty", cal.best_penalty}};
  write_text_file(dir / "weights.json", w.dump(2) + "\n");
  std::ostringstream csv;
  csv << "# moesim manifest " << m.hash() << "\nlru,lfu,lhu,fld,total_miss_penalty\n";
  for (const auto& p : cal.grid)
    csv << fmt_num(p.weights.lru) << ',' << fmt_num(p.weights.lfu) << ',' << fmt_num(p.weights.lhu)
        << ',' << fmt_num(p.weights.fld) << ',' << fmt_num(p.penalty) << '\n';
  write_text_file(dir / "grid.csv", csv.str());
  std::cout << w.dump(2) << "\n";
  return 0;
}

int cmd_validate_proxy(const std::string& spec_path, std::optional<std::uint64_t> seed,
                       std::optional<std::size_t> samples, const std::string& out) {
  ProxySpec spec;
  if (!spec_path.empty()) {
    const json j = parse_json_as<json>(read_file(spec_path), "proxy spec");
    spec.d_model = j.value("d_model", spec.d_model);
    spec.d_ff = j.value("d_ff", spec.d_ff);
    spec.n_experts = j.value("n_experts", spec.n_experts);
    spec.top_k = j.value("top_k", spec.top_k);
    spec.n_samples = j.value("n_samples", spec.n_samples);
    spec.gate_scale = j.value("gate_scale", spec.gate_scale);
    spec.seed = j.value("seed", spec.seed);
  }
  if (seed) spec.seed = *seed;
  if (samples) spec.n_samples = *samples;
  const ProxyReport r = proxy_correlation(spec);
  json j{{"pearson_r", r.r}, {"n_samples", r.n_samples}, {"n_pairs", r.n_pairs},
         {"d_model", spec.d_model}, {"d_ff", spec.d_ff}, {"n_experts", spec.n_experts},
         {"top_k", spec.top_k}, {"seed", spec.seed}};
  if (!out.empty()) {
    RunManifest m{"validate-proxy", spec_path, "", out};
    m.seed = spec.seed;
    m.digest_inputs();
    j["manifest"] = m.to_json();
    write_text_file(out, j.dump(2) + "\n");
  }
  std::cout << "pearson_r=" << fmt_num(r.r) << " samples=" << r.n_samples << " pairs=" << r.n_pairs
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"moesim: mixed-precision MoE expert offloading simulator"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  std::string config, trace, out, format = "jsonl", axis;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> samples;
  double grid_step = 0.1;
  bool events = false;
  Overrides ov;

  auto* gen = app.add_subcommand("gen-trace", "Generate a synthetic gating trace");
  gen->add_option("--config", config, "Trace spec (JSON)")->required();
  gen->add_option("--out", out, "Output trace path")->required();
  gen->add_option("--format", format, "jsonl|binary");
  gen->add_option("--seed", seed, "Override the spec seed");

  auto* conv = app.add_subcommand("convert", "Convert a trace between jsonl and binary");
  conv->add_option("--trace", trace, "Input trace")->required();
  conv->add_option("--out", out, "Output trace path")->required();
  conv->add_option("--format", format, "Output encoding: jsonl|binary")->required();

  auto* sim = app.add_subcommand("simulate", "Run one simulation");
  sim->add_option("--config", config, "Run config (JSON); defaults when omitted");
  sim->add_option("--trace", trace, "Trace file")->required();
  sim->add_option("--out", out, "Output directory")->required();
  sim->add_flag("--events", events, "Also write the event stream");
  ov.add_to(sim);

  auto* sweep = app.add_subcommand("sweep", "Sweep one config axis over a shared trace");
  sweep->add_option("--config", config, "Run config (JSON)");
  sweep->add_option("--trace", trace, "Trace file")->required();
  sweep->add_option("--axis", axis, "Axis, e.g. p=0,1,2,3,4")->required();
  sweep->add_option("--out", out, "Combined CSV path")->required();
  Overrides sweep_ov;
  sweep_ov.add_to(sweep);

  auto* cal = app.add_subcommand("calibrate", "Grid-search cache policy weights");
  cal->add_option("--config", config, "Run config (JSON)");
  cal->add_option("--trace", trace, "Calibration trace")->required();
  cal->add_option("--grid-step", grid_step, "Simplex grid spacing (must divide 1)");
  cal->add_option("--out", out, "Output directory")->required();
  Overrides cal_ov;
  cal_ov.add_to(cal);

  auto* proxy = app.add_subcommand("validate-proxy", "Correlate gate weight with expert output norm");
  proxy->add_option("--config", config, "Proxy spec (JSON); defaults when omitted");
  proxy->add_option("--seed", seed, "Override the seed");
  proxy->add_option("--samples", samples, "Number of random inputs");
  proxy->add_option("--out", out, "Write the report as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen_trace(config, out, format, seed);
    if (*conv) return cmd_convert(trace, out, format);
    if (*sim) return cmd_simulate(config, trace, out, ov, events);
    if (*sweep) return cmd_sweep(config, trace, axis, out, sweep_ov);
    if (*cal) return cmd_calibrate(config, trace, grid_step, out, cal_ov);
    if (*proxy) return cmd_validate_proxy(config, seed, samples, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
