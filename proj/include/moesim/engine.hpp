#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moesim/cache.hpp"
#include "moesim/gating.hpp"
#include "moesim/loader.hpp"
#include "moesim/predictor.hpp"
#include "moesim/trace.hpp"

namespace moesim {

/// Every knob of one simulation. Each mechanism switches independently so
/// the ablation matrix can be expressed.
struct RunConfig {
  std::optional<ModelSpec> model;  // when set, must match the trace
  CostModel cost{};
  Thresholds thresholds{};
  bool dynamic_loading = true;
  bool prefetching = true;
  std::size_t lookahead = 1;
  CacheConfig cache{};
  bool sequence_level_records = true;
  bool prewarm = false;  // start with every expert resident, up to capacity
  std::uint64_t seed = 0;

  // Output controls; none of them change simulated behavior.
  bool normalize_vs_random = true;
  bool collect_rows = true;
  bool collect_events = false;

  void validate(const ModelSpec& trace_model) const {
    if (model && !(*model == trace_model)) {
      // seed is a run parameter, not part of the shape
      ModelSpec a = *model, b = trace_model;
      a.seed = b.seed = 0;
      if (!(a == b)) throw InputError("config model section does not match the trace model");
    }
    cost.validate();
    thresholds.validate();
    effective_weights(cache.policy, cache.weights).validate();
    if (cache.cap_high < trace_model.top_k || cache.cap_low < trace_model.top_k)
      throw InputError("cache capacities must be at least top_k (" +
                       std::to_string(trace_model.top_k) + ")");
  }
};

enum class Phase : std::uint8_t { Prefill, Decode };

inline const char* to_string(Phase p) { return p == Phase::Prefill ? "prefill" : "decode"; }

struct TimelineRow {
  std::uint32_t sequence = 0;
  std::size_t pass = 0;  // 0 = prefill, i = i-th decode token
  Phase phase = Phase::Prefill;
  std::size_t layer = 0;
  double start_ms = 0.0;
  double attn_gate_ms = 0.0;
  double stall_ms = 0.0;
  double compute_ms = 0.0;
  double end_ms = 0.0;
  std::size_t hits = 0;
  std::size_t misses = 0;
  std::size_t n_high = 0;
  std::size_t n_low = 0;
  std::size_t n_skip = 0;

  double duration() const { return attn_gate_ms + stall_ms + compute_ms; }
};

enum class EventKind : std::uint8_t { Miss, Load, Evict, Stall, Drop, MaskOverride };

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::Miss: return "miss";
    case EventKind::Load: return "load";
    case EventKind::Evict: return "evict";
    case EventKind::Stall: return "stall";
    case EventKind::Drop: return "drop";
    case EventKind::MaskOverride: return "mask_override";
  }
  return "?";
}

/// One entry of the simulation's event stream. `time` is the finish time for
/// loads and evictions, the stall start for stalls; `value` is the start time
/// of a load or the length of a stall.
struct SimEvent {
  EventKind kind = EventKind::Load;
  std::int64_t step = 0;
  double time = 0.0;
  ExpertKey key{};
  Precision precision = Precision::High;
  TaskKind task = TaskKind::OnDemand;
  double value = 0.0;

  friend bool operator==(const SimEvent&, const SimEvent&) = default;
};

struct SimReport {
  std::size_t sequences = 0;
  double prefill_latency_ms = 0.0;  // summed over sequences
  std::size_t decode_tokens = 0;
  double decode_total_ms = 0.0;
  std::optional<double> decode_ms_per_token;
  std::optional<double> tokens_per_s;

  double total_miss_penalty = 0.0;
  std::optional<double> random_miss_penalty;
  std::optional<double> normalized_miss_penalty;

  std::size_t requests_high = 0, hits_high = 0;
  std::size_t requests_low = 0, hits_low = 0, low_served_high = 0;

  double bytes_loaded = 0.0;
  double bytes_prefetched = 0.0;
  std::size_t loads_high = 0, loads_low = 0, loads_prefetch = 0;
  std::size_t prefetch_dropped = 0;
  std::size_t mask_overrides = 0;
  std::size_t streamed_evictions = 0;  // current-layer experts evicted during prefill
  double stall_ms = 0.0;

  std::size_t selections_high = 0, selections_low = 0, selections_skip = 0;

  std::vector<TimelineRow> rows;
  std::vector<SimEvent> events;

  std::size_t selections() const { return selections_high + selections_low + selections_skip; }
  double share(std::size_t n) const {
    return selections() ? 100.0 * static_cast<double>(n) / static_cast<double>(selections()) : 0.0;
  }
  double hit_ratio_high() const { return requests_high ? double(hits_high) / double(requests_high) : 0.0; }
  double hit_ratio_low() const { return requests_low ? double(hits_low) / double(requests_low) : 0.0; }
  double hit_ratio() const {
    const auto r = requests_high + requests_low;
    return r ? double(hits_high + hits_low) / double(r) : 0.0;
  }
};

/// Drives prefill and decode over a trace, one layer at a time.
class Simulator {
 public:
  Simulator(const Trace& trace, const RunConfig& cfg)
      : trace_(trace), cfg_(cfg), cache_(trace.model, cache_config(cfg)), channel_(cfg.cost) {
    trace.validate();
    cfg.validate(trace.model);
    if (cfg.prewarm) prewarm();
  }

  SimReport run() {
    for (const auto& seq : trace_.sequences) run_sequence(seq);
    finish();
    return std::move(report_);
  }

  const ExpertCache& cache() const { return cache_; }

 private:
  static CacheConfig cache_config(const RunConfig& cfg) {
    CacheConfig c = cfg.cache;
    c.seed = cfg.seed;
    return c;
  }

  void prewarm() {
    const auto& m = trace_.model;
    for (auto p : {Precision::High, Precision::Low})
      for (std::uint32_t l = 0; l < m.n_layers; ++l)
        for (std::uint32_t e = 0; e < m.n_experts; ++e)
          if (cache_.pool(p).size() < cache_.capacity(p))
            cache_.insert({l, e}, p, 0, {}, {.record_use = false});
  }

  void run_sequence(const SequenceTrace& seq) {
    if (cfg_.sequence_level_records) cache_.reset_sequence();
    ++report_.sequences;
    const std::size_t d = trace_.model.d_model;

    cache_.begin_token();
    double prefill = 0.0;
    for (std::size_t l = 0; l < trace_.model.n_layers; ++l) {
      std::vector<std::span<const float>> inputs;
      for (const auto& tok : seq.prompt) inputs.push_back(tok.layer(l, d));
      prefill += run_layer(seq.id, 0, Phase::Prefill, l, inputs);
    }
    report_.prefill_latency_ms += prefill;

    for (std::size_t i = 0; i < seq.decode.size(); ++i) {
      cache_.begin_token();
      double token = 0.0;
      for (std::size_t l = 0; l < trace_.model.n_layers; ++l) {
        const std::span<const float> x[] = {seq.decode[i].layer(l, d)};
        token += run_layer(seq.id, i + 1, Phase::Decode, l, x);
      }
      report_.decode_total_ms += token;
      ++report_.decode_tokens;
    }
  }

  struct Required {
    ExpertKey key;
    Decision decision;
  };

  // Merges per-token selections into one requirement per expert, keeping the
  // strongest precision asked for and first-seen order.
  std::vector<Required> requirements(std::span<const GateOutcome> outcomes,
                                     std::span<const PrecisionDecision> decisions) {
    std::vector<Required> req;
    for (std::size_t t = 0; t < outcomes.size(); ++t)
      for (std::size_t i = 0; i < outcomes[t].ranked.size(); ++i) {
        const ExpertKey k = outcomes[t].ranked[i].key;
        const Decision dcs = decisions[t][i];
        auto it = std::find_if(req.begin(), req.end(), [&](const Required& r) { return r.key == k; });
        if (it == req.end())
          req.push_back({k, dcs});
        else if (static_cast<int>(dcs) < static_cast<int>(it->decision))
          it->decision = dcs;  // High < Low < Skip
      }
    return req;
  }

  double run_layer(std::uint32_t seq_id, std::size_t pass, Phase phase, std::size_t layer,
                   std::span<const std::span<const float>> inputs) {
    const auto& m = trace_.model;
    const auto& cost = cfg_.cost;
    TimelineRow row;
    row.sequence = seq_id;
    row.pass = pass;
    row.phase = phase;
    row.layer = layer;
    row.start_ms = clock_;

    // Attention and router.
    row.attn_gate_ms = cost.attn_compute_ms + cost.gate_compute_ms;
    clock_ += row.attn_gate_ms;
    apply(channel_.advance(clock_, front_));

    // Routing decisions for this layer.
    front_ = step_;
    std::vector<GateOutcome> outcomes;
    std::vector<PrecisionDecision> decisions;
    for (const auto& x : inputs) {
      outcomes.push_back(compute_gate(x, trace_.gates[layer], m.top_k));
      decisions.push_back(cfg_.dynamic_loading
                              ? classify_precision(unimportance_scores(outcomes.back()), cfg_.thresholds)
                              : all_high(m.top_k));
      for (Decision dcs : decisions.back()) {
        if (dcs == Decision::High) ++row.n_high;
        if (dcs == Decision::Low) ++row.n_low;
        if (dcs == Decision::Skip) ++row.n_skip;
      }
    }
    const auto required = requirements(outcomes, decisions);
    ctx_layer_ = layer;
    ctx_exclude_.clear();
    for (const auto& r : required)
      if (r.decision != Decision::Skip) ctx_exclude_.push_back(r.key);

    // Cache lookups.
    std::vector<LoadTask> demand;
    for (const auto& r : required) {
      if (r.decision == Decision::Skip) continue;
      const Precision wanted = to_precision(r.decision);
      auto& requests = wanted == Precision::High ? report_.requests_high : report_.requests_low;
      ++requests;
      const auto hit = cache_.lookup(r.key, wanted);
      if (hit.hit()) {
        cache_.on_use(r.key, *hit.served);
        ++row.hits;
        if (wanted == Precision::High) {
          ++report_.hits_high;
        } else {
          ++report_.hits_low;
          if (*hit.served == Precision::High) ++report_.low_served_high;
        }
      } else {
        ++row.misses;
        report_.total_miss_penalty += miss_penalty(wanted, cost.bits);
        log({EventKind::Miss, step_, clock_, r.key, wanted, TaskKind::OnDemand, 0.0});
        demand.push_back({r.key, wanted, TaskKind::OnDemand, clock_, step_});
      }
    }

    // Lookahead prefetch.
    if (cfg_.prefetching && cfg_.lookahead > 0) {
      const auto pred = adaptive_predict(inputs, layer, cfg_.lookahead, trace_.gates, m.top_k, cache_);
      cache_.mask(pred.masked);
      for (const auto& t : enqueue_prefetch(pred, cache_, clock_, step_)) channel_.enqueue(t);
    }

    // On-demand loads; the layer waits for all of them.
    for (const auto& t : demand) channel_.enqueue(t);
    double ready = clock_;
    if (channel_.has_on_demand()) {
      const auto done = channel_.drain_on_demand(front_);
      for (const auto& c : done)
        if (c.task.kind == TaskKind::OnDemand) ready = std::max(ready, c.finish);
      apply(done);
    }
    row.stall_ms = ready - clock_;
    if (row.stall_ms > 0.0) {
      log({EventKind::Stall, step_, clock_, {}, Precision::High, TaskKind::OnDemand, row.stall_ms});
      report_.stall_ms += row.stall_ms;
    }
    clock_ += row.stall_ms;

    const std::size_t active = ctx_exclude_.size();
    row.compute_ms = cost.expert_compute_ms * static_cast<double>(active);
    clock_ += row.compute_ms;
    row.end_ms = clock_;
    cache_.expire_masks_through(layer);
    ++step_;

    const double duration = row.duration();
    if (cfg_.collect_rows) report_.rows.push_back(row);
    report_.selections_high += row.n_high;
    report_.selections_low += row.n_low;
    report_.selections_skip += row.n_skip;
    return duration;
  }

  void apply(const std::vector<Completion>& done) {
    for (const auto& c : done) {
      const auto& t = c.task;
      if (cache_.has(t.key, t.precision)) continue;
      const bool demand = t.kind == TaskKind::OnDemand;
      InsertResult res;
      try {
        res = cache_.insert(t.key, t.precision, ctx_layer_, ctx_exclude_,
                            {.record_use = demand, .masks_yield = demand, .exclude_yields = demand});
      } catch (const CapacityError&) {
        if (demand) throw;
        ++report_.prefetch_dropped;
        log({EventKind::Drop, t.target_step, c.finish, t.key, t.precision, t.kind, c.start});
        continue;
      }
      const double bytes = cfg_.cost.expert_bytes(t.precision);
      report_.bytes_loaded += bytes;
      (t.precision == Precision::High ? report_.loads_high : report_.loads_low)++;
      if (!demand) {
        report_.bytes_prefetched += bytes;
        ++report_.loads_prefetch;
      }
      log({EventKind::Load, t.target_step, c.finish, t.key, t.precision, t.kind, c.start});
      if (res.mask_overridden) {
        ++report_.mask_overrides;
        log({EventKind::MaskOverride, t.target_step, c.finish, *res.evicted, t.precision, t.kind, 0.0});
      }
      if (res.exclude_overridden) ++report_.streamed_evictions;
      if (res.evicted)
        log({EventKind::Evict, t.target_step, c.finish, *res.evicted, t.precision, t.kind, 0.0});
    }
  }

  void log(SimEvent e) {
    if (cfg_.collect_events) report_.events.push_back(e);
  }

  void finish() {
    report_.prefetch_dropped += channel_.dropped().size();
    if (report_.decode_tokens > 0) {
      report_.decode_ms_per_token = report_.decode_total_ms / static_cast<double>(report_.decode_tokens);
      if (*report_.decode_ms_per_token > 0.0) report_.tokens_per_s = 1000.0 / *report_.decode_ms_per_token;
    }
  }

  const Trace& trace_;
  RunConfig cfg_;
  ExpertCache cache_;
  TransferChannel channel_;
  SimReport report_;
  double clock_ = 0.0;
  std::int64_t step_ = 0;    // global layer step
  std::int64_t front_ = -1;  // last step whose routing is decided
  std::size_t ctx_layer_ = 0;
  std::vector<ExpertKey> ctx_exclude_;
};

/// Runs one simulation. Non-random policies also get a paired Random-policy
/// run on the same trace so the miss penalty can be normalized.
inline SimReport simulate(const Trace& trace, const RunConfig& cfg) {
  SimReport report = Simulator(trace, cfg).run();
  if (cfg.normalize_vs_random) {
    if (cfg.cache.policy == PolicyKind::Random) {
      report.random_miss_penalty = report.total_miss_penalty;
    } else {
      RunConfig twin = cfg;
      twin.cache.policy = PolicyKind::Random;
      twin.collect_rows = false;
      twin.collect_events = false;
      twin.normalize_vs_random = false;
      report.random_miss_penalty = Simulator(trace, twin).run().total_miss_penalty;
    }
    if (*report.random_miss_penalty > 0.0)
      report.normalized_miss_penalty = report.total_miss_penalty / *report.random_miss_penalty;
  }
  return report;
}

/// All nonnegative weight vectors on the simplex with coordinates that are
/// multiples of `grid_step`, in lexicographic order.
inline std::vector<PolicyWeights> weight_grid(double grid_step) {
  if (!(grid_step > 0.0) || grid_step > 1.0) throw InputError("grid step must lie in (0, 1]");
  const double steps = 1.0 / grid_step;
  const auto n = static_cast<int>(std::lround(steps));
  if (std::abs(steps - n) > 1e-9) throw InputError("grid step must divide 1 evenly");
  std::vector<PolicyWeights> grid;
  for (int a = 0; a <= n; ++a)
    for (int b = 0; a + b <= n; ++b)
      for (int c = 0; a + b + c <= n; ++c) {
        const int d = n - a - b - c;
        grid.push_back({double(a) / n, double(b) / n, double(c) / n, double(d) / n});
      }
  return grid;
}

struct CalibrationPoint {
  PolicyWeights weights;
  double penalty = 0.0;
};

struct Calibration {
  PolicyWeights best;
  double best_penalty = 0.0;
  std::vector<CalibrationPoint> grid;
};

/// Exhaustive search for the weights with the lowest total miss penalty on a
/// calibration trace. Ties go to the lexicographically smallest vector.
inline Calibration calibrate_weights(const Trace& trace, const RunConfig& base, double grid_step) {
  RunConfig cfg = base;
  cfg.cache.policy = PolicyKind::Weighted;
  cfg.normalize_vs_random = false;
  cfg.collect_rows = false;
  cfg.collect_events = false;
  Calibration out;
  for (const auto& w : weight_grid(grid_step)) {
    cfg.cache.weights = w;
    const double penalty = Simulator(trace, cfg).run().total_miss_penalty;
    out.grid.push_back({w, penalty});
    if (out.grid.size() == 1 || penalty < out.best_penalty) {
      out.best = w;
      out.best_penalty = penalty;
    }
  }
  return out;
}

}  // namespace moesim
