#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "moesim/config.hpp"
#include "moesim/engine.hpp"

namespace moesim {

/// One sweep axis: a RunConfig field and the values it takes.
/// Text form `name=v1,v2,...`; names are p, t1, t2, cap_high, cap_low,
/// policy, dynamic_loading, and weights (each value `lru:lfu:lhu:fld`).
struct SweepAxis {
  std::string name;
  std::vector<std::string> values;
};

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InputError(what + ": '" + s + "' is not a number");
  }
}

inline std::size_t parse_count(const std::string& s, const std::string& what) {
  const double v = parse_double(s, what);
  if (v < 0 || v != std::floor(v)) throw InputError(what + ": '" + s + "' is not a count");
  return static_cast<std::size_t>(v);
}

inline SweepAxis parse_axis(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) throw InputError("axis must look like name=v1,v2,...");
  SweepAxis axis{spec.substr(0, eq), {}};
  for (auto& v : split(spec.substr(eq + 1), ','))
    if (!v.empty()) axis.values.push_back(v);
  if (axis.values.empty()) throw InputError("sweep axis '" + axis.name + "' has an empty grid");
  static const char* known[] = {"p",      "t1",     "t2",       "cap_high", "cap_low",
                                "policy", "weights", "dynamic_loading"};
  if (std::find(std::begin(known), std::end(known), axis.name) == std::end(known))
    throw InputError("unknown sweep axis '" + axis.name + "'");
  return axis;
}

inline RunConfig apply_axis(RunConfig cfg, const std::string& name, const std::string& value) {
  if (name == "p") {
    cfg.lookahead = parse_count(value, "p");
    cfg.prefetching = cfg.lookahead > 0;
  } else if (name == "t1") {
    cfg.thresholds.t1 = parse_double(value, "t1");
  } else if (name == "t2") {
    cfg.thresholds.t2 = parse_double(value, "t2");
  } else if (name == "cap_high") {
    cfg.cache.cap_high = parse_count(value, "cap_high");
  } else if (name == "cap_low") {
    cfg.cache.cap_low = parse_count(value, "cap_low");
  } else if (name == "policy") {
    cfg.cache.policy = parse_policy(value);
  } else if (name == "dynamic_loading") {
    cfg.dynamic_loading = parse_count(value, "dynamic_loading") != 0;
  } else if (name == "weights") {
    const auto parts = split(value, ':');
    if (parts.size() != 4) throw InputError("weights value must be lru:lfu:lhu:fld");
    cfg.cache.policy = PolicyKind::Weighted;
    cfg.cache.weights = {parse_double(parts[0], "weights"), parse_double(parts[1], "weights"),
                         parse_double(parts[2], "weights"), parse_double(parts[3], "weights")};
  } else {
    throw InputError("unknown sweep axis '" + name + "'");
  }
  return cfg;
}

struct SweepPoint {
  std::string value;
  SimReport report;
};

/// Runs every grid point on the same trace, in grid order.
inline std::vector<SweepPoint> run_sweep(const Trace& trace, const RunConfig& base,
                                         const SweepAxis& axis) {
  std::vector<SweepPoint> out;
  for (const auto& v : axis.values) {
    RunConfig cfg = apply_axis(base, axis.name, v);
    cfg.collect_rows = false;
    cfg.collect_events = false;
    out.push_back({v, simulate(trace, cfg)});
  }
  return out;
}

}  // namespace moesim
