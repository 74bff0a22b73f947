#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "moesim/config.hpp"
#include "moesim/engine.hpp"

namespace moesim {

inline constexpr std::string_view kToolVersion = "1.0.0";
inline constexpr int kReportSchemaVersion = 1;

inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Identifies the inputs behind an output file. Input files enter the hash
/// by content, so reruns on identical inputs produce identical manifests.
struct RunManifest {
  std::string command;
  std::string config_path;
  std::string trace_path;
  std::string out_dir;
  std::string tool_version{kToolVersion};
  std::uint64_t seed = 0;
  std::string extra{};  // command-specific arguments, e.g. the sweep axis
  std::uint64_t config_digest = 0;
  std::uint64_t trace_digest = 0;

  void digest_inputs() {
    if (!config_path.empty()) config_digest = fnv1a64(read_file(config_path));
    if (!trace_path.empty()) trace_digest = fnv1a64(read_file(trace_path));
  }

  std::string hash() const {
    std::uint64_t h = fnv1a64(command);
    for (const auto& s : {config_path, trace_path, out_dir, tool_version, extra}) {
      h = fnv1a64("\x1f", h);
      h = fnv1a64(s, h);
    }
    h = fnv1a64(hex64(seed) + hex64(config_digest) + hex64(trace_digest), h);
    return hex64(h);
  }

  json to_json() const {
    return json{{"command", command},         {"config", config_path},
                {"trace", trace_path},        {"out", out_dir},
                {"tool_version", tool_version}, {"seed", seed},
                {"args", extra},              {"config_digest", hex64(config_digest)},
                {"trace_digest", hex64(trace_digest)}, {"hash", hash()}};
  }
};

inline std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
json opt_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

inline json summary_json(const SimReport& r) {
  return json{{"sequences", r.sequences},
              {"prefill_latency_ms", r.prefill_latency_ms},
              {"decode_tokens", r.decode_tokens},
              {"decode_total_ms", r.decode_total_ms},
              {"decode_ms_per_token", opt_json(r.decode_ms_per_token)},
              {"tokens_per_s", opt_json(r.tokens_per_s)},
              {"total_miss_penalty", r.total_miss_penalty},
              {"random_miss_penalty", opt_json(r.random_miss_penalty)},
              {"normalized_miss_penalty", opt_json(r.normalized_miss_penalty)},
              {"hit_ratio", r.hit_ratio()},
              {"hit_ratio_high", r.hit_ratio_high()},
              {"hit_ratio_low", r.hit_ratio_low()},
              {"requests_high", r.requests_high},
              {"hits_high", r.hits_high},
              {"requests_low", r.requests_low},
              {"hits_low", r.hits_low},
              {"low_served_high", r.low_served_high},
              {"bytes_loaded", r.bytes_loaded},
              {"bytes_prefetched", r.bytes_prefetched},
              {"loads_high", r.loads_high},
              {"loads_low", r.loads_low},
              {"loads_prefetch", r.loads_prefetch},
              {"prefetch_dropped", r.prefetch_dropped},
              {"mask_overrides", r.mask_overrides},
              {"streamed_evictions", r.streamed_evictions},
              {"stall_ms", r.stall_ms},
              {"precision_mix",
               {{"high_pct", r.share(r.selections_high)},
                {"low_pct", r.share(r.selections_low)},
                {"skip_pct", r.share(r.selections_skip)},
                {"selections", r.selections()}}}};
}

inline json report_json(const SimReport& r, const RunConfig& cfg, const RunManifest& m) {
  return json{{"schema", "moesim-report"},
              {"schema_version", kReportSchemaVersion},
              {"manifest", m.to_json()},
              {"config", cfg},
              {"summary", summary_json(r)}};
}

inline constexpr std::string_view kTokenCsvHeader =
    "sequence,pass,phase,start_ms,latency_ms,attn_gate_ms,stall_ms,compute_ms,hits,misses,"
    "n_high,n_low,n_skip";

/// One row per forward pass (prefill or decode token), then a summary row.
inline void write_token_csv(std::ostream& os, const SimReport& r, const RunManifest& m) {
  os << "# moesim manifest " << m.hash() << '\n' << kTokenCsvHeader << '\n';
  std::size_t i = 0;
  while (i < r.rows.size()) {
    const auto& first = r.rows[i];
    TimelineRow acc = first;
    acc.attn_gate_ms = acc.stall_ms = acc.compute_ms = 0.0;
    acc.hits = acc.misses = acc.n_high = acc.n_low = acc.n_skip = 0;
    double latency = 0.0;
    for (; i < r.rows.size() && r.rows[i].sequence == first.sequence && r.rows[i].pass == first.pass;
         ++i) {
      const auto& row = r.rows[i];
      latency += row.duration();
      acc.attn_gate_ms += row.attn_gate_ms;
      acc.stall_ms += row.stall_ms;
      acc.compute_ms += row.compute_ms;
      acc.hits += row.hits;
      acc.misses += row.misses;
      acc.n_high += row.n_high;
      acc.n_low += row.n_low;
      acc.n_skip += row.n_skip;
    }
    os << acc.sequence << ',' << acc.pass << ',' << to_string(acc.phase) << ','
       << fmt_num(acc.start_ms) << ',' << fmt_num(latency) << ',' << fmt_num(acc.attn_gate_ms) << ','
       << fmt_num(acc.stall_ms) << ',' << fmt_num(acc.compute_ms) << ',' << acc.hits << ','
       << acc.misses << ',' << acc.n_high << ',' << acc.n_low << ',' << acc.n_skip << '\n';
  }
  os << "all,,summary,," << fmt_num(r.prefill_latency_ms + r.decode_total_ms) << ",,"
     << fmt_num(r.stall_ms) << ",," << (r.hits_high + r.hits_low) << ','
     << (r.requests_high + r.requests_low - r.hits_high - r.hits_low) << ',' << r.selections_high
     << ',' << r.selections_low << ',' << r.selections_skip << '\n';
}

inline void write_layer_csv(std::ostream& os, const SimReport& r, const RunManifest& m) {
  os << "# moesim manifest " << m.hash() << '\n'
     << "sequence,pass,phase,layer,start_ms,attn_gate_ms,stall_ms,compute_ms,end_ms,hits,misses,"
        "n_high,n_low,n_skip\n";
  for (const auto& row : r.rows)
    os << row.sequence << ',' << row.pass << ',' << to_string(row.phase) << ',' << row.layer << ','
       << fmt_num(row.start_ms) << ',' << fmt_num(row.attn_gate_ms) << ',' << fmt_num(row.stall_ms)
       << ',' << fmt_num(row.compute_ms) << ',' << fmt_num(row.end_ms) << ',' << row.hits << ','
       << row.misses << ',' << row.n_high << ',' << row.n_low << ',' << row.n_skip << '\n';
}

inline void write_event_csv(std::ostream& os, const SimReport& r, const RunManifest& m) {
  os << "# moesim manifest " << m.hash() << '\n'
     << "kind,step,time_ms,layer,expert,precision,task,value\n";
  for (const auto& e : r.events)
    os << to_string(e.kind) << ',' << e.step << ',' << fmt_num(e.time) << ',' << e.key.layer << ','
       << e.key.expert << ',' << to_string(e.precision) << ',' << to_string(e.task) << ','
       << fmt_num(e.value) << '\n';
}

/// Columns shared by sweep rows: the swept value followed by summary metrics.
inline constexpr std::string_view kSweepCsvHeader =
    "axis,value,prefill_latency_ms,decode_ms_per_token,tokens_per_s,total_miss_penalty,"
    "normalized_miss_penalty,hit_ratio,hit_ratio_high,hit_ratio_low,bytes_loaded,stall_ms,"
    "high_pct,low_pct,skip_pct";

inline void write_sweep_row(std::ostream& os, const std::string& axis, const std::string& value,
                            const SimReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? fmt_num(*v) : std::string{}; };
  os << axis << ',' << value << ',' << fmt_num(r.prefill_latency_ms) << ','
     << opt(r.decode_ms_per_token) << ',' << opt(r.tokens_per_s) << ','
     << fmt_num(r.total_miss_penalty) << ',' << opt(r.normalized_miss_penalty) << ','
     << fmt_num(r.hit_ratio()) << ',' << fmt_num(r.hit_ratio_high()) << ','
     << fmt_num(r.hit_ratio_low()) << ',' << fmt_num(r.bytes_loaded) << ',' << fmt_num(r.stall_ms)
     << ',' << fmt_num(r.share(r.selections_high)) << ',' << fmt_num(r.share(r.selections_low))
     << ',' << fmt_num(r.share(r.selections_skip)) << '\n';
}

inline void write_text_file(const std::filesystem::path& p, const std::string& content) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write '" + p.string() + "'");
  out << content;
}

}  // namespace moesim
