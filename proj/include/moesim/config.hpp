#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "moesim/engine.hpp"
#include "moesim/trace_io.hpp"

namespace moesim {

inline void to_json(json& j, const PolicyWeights& w) {
  j = json{{"lru", w.lru}, {"lfu", w.lfu}, {"lhu", w.lhu}, {"fld", w.fld}};
}

inline void from_json(const json& j, PolicyWeights& w) {
  w.lru = j.value("lru", 0.0);
  w.lfu = j.value("lfu", 0.0);
  w.lhu = j.value("lhu", 0.0);
  w.fld = j.value("fld", 0.0);
}

inline void to_json(json& j, const RunConfig& c) {
  j = json::object();
  if (c.model) j["model"] = *c.model;
  j["cost"] = {{"bandwidth_bytes_per_ms", c.cost.bandwidth_bytes_per_ms},
               {"expert_bytes_high", c.cost.expert_bytes_high},
               {"expert_bytes_low", c.cost.expert_bytes_low},
               {"attn_compute_ms", c.cost.attn_compute_ms},
               {"expert_compute_ms", c.cost.expert_compute_ms},
               {"gate_compute_ms", c.cost.gate_compute_ms},
               {"bits_high", c.cost.bits.high},
               {"bits_low", c.cost.bits.low}};
  j["gating"] = {{"dynamic_loading", c.dynamic_loading},
                 {"t1", c.thresholds.t1},
                 {"t2", c.thresholds.t2}};
  j["prefetch"] = {{"enabled", c.prefetching}, {"lookahead", c.lookahead}};
  j["cache"] = {{"cap_high", c.cache.cap_high},
                {"cap_low", c.cache.cap_low},
                {"policy", to_string(c.cache.policy)},
                {"weights", c.cache.weights},
                {"sequence_level", c.sequence_level_records},
                {"prewarm", c.prewarm}};
  j["seed"] = c.seed;
}

/// Reads a run config. Missing fields keep their defaults; the low-precision
/// expert size follows the bit widths unless given. Byte budgets
/// (`high_bytes` / `low_bytes`) convert to expert counts.
inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    if (j.contains("model")) c.model = j.at("model").get<ModelSpec>();
    if (j.contains("cost")) {
      const auto& s = j.at("cost");
      auto& k = c.cost;
      k.bits.high = s.value("bits_high", k.bits.high);
      k.bits.low = s.value("bits_low", k.bits.low);
      k.bandwidth_bytes_per_ms = s.value("bandwidth_bytes_per_ms", k.bandwidth_bytes_per_ms);
      k.expert_bytes_high = s.value("expert_bytes_high", k.expert_bytes_high);
      k.expert_bytes_low = s.contains("expert_bytes_low")
                               ? s.at("expert_bytes_low").get<double>()
                               : k.expert_bytes_high * k.bits.ratio();
      k.attn_compute_ms = s.value("attn_compute_ms", k.attn_compute_ms);
      k.expert_compute_ms = s.value("expert_compute_ms", k.expert_compute_ms);
      k.gate_compute_ms = s.value("gate_compute_ms", k.gate_compute_ms);
    }
    if (j.contains("gating")) {
      const auto& s = j.at("gating");
      c.dynamic_loading = s.value("dynamic_loading", c.dynamic_loading);
      c.thresholds.t1 = s.value("t1", c.thresholds.t1);
      c.thresholds.t2 = s.value("t2", c.thresholds.t2);
    }
    if (j.contains("prefetch")) {
      const auto& s = j.at("prefetch");
      c.prefetching = s.value("enabled", c.prefetching);
      c.lookahead = s.value("lookahead", c.lookahead);
    }
    if (j.contains("cache")) {
      const auto& s = j.at("cache");
      c.cache.cap_high = s.value("cap_high", c.cache.cap_high);
      c.cache.cap_low = s.value("cap_low", c.cache.cap_low);
      if (s.contains("high_bytes"))
        c.cache.cap_high = static_cast<std::size_t>(
            std::floor(s.at("high_bytes").get<double>() / c.cost.expert_bytes_high));
      if (s.contains("low_bytes"))
        c.cache.cap_low = static_cast<std::size_t>(
            std::floor(s.at("low_bytes").get<double>() / c.cost.expert_bytes_low));
      if (s.contains("policy")) c.cache.policy = parse_policy(s.at("policy").get<std::string>());
      if (s.contains("weights")) c.cache.weights = s.at("weights").get<PolicyWeights>();
      c.sequence_level_records = s.value("sequence_level", c.sequence_level_records);
      c.prewarm = s.value("prewarm", c.prewarm);
    }
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw InputError(std::string("config: ") + e.what());
  }
  return c;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline RunConfig load_run_config(const std::string& path) {
  const std::string text = read_file(path);
  try {
    return run_config_from_json(json::parse(text));
  } catch (const json::parse_error& e) {
    throw InputError("config '" + path + "': " + e.what());
  }
}

inline TraceSpec load_trace_spec(const std::string& path) {
  return parse_json_as<TraceSpec>(read_file(path), "trace spec '" + path + "'");
}

}  // namespace moesim
