#pragma once

// Reference implementations used as test oracles. They are written against
// the rules, not against the library internals, and share only plain data
// types (ExpertKey, GateMatrix, Trace, SimEvent) with the code under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "moesim/moesim.hpp"

namespace oracle {

using namespace moesim;

inline std::vector<double> prefix_sum_scores(const std::vector<double>& w) {
  std::vector<double> s(w.size());
  double run = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    s[i] = run;
    run = run + w[i];
  }
  return s;
}

struct Selected {
  std::uint32_t expert;
  double weight;
};

/// One layer's gate evaluated on its own: full logit vector, stable sort by
/// value, softmax over the first k.
inline std::vector<Selected> sequential_gate(const std::vector<float>& x, const GateMatrix& g,
                                             std::size_t k) {
  std::vector<double> logit(g.rows);
  for (std::size_t e = 0; e < g.rows; ++e) {
    double acc = 0.0;
    for (std::size_t i = 0; i < g.cols; ++i)
      acc += static_cast<double>(g.weights[e * g.cols + i]) * static_cast<double>(x[i]);
    logit[e] = acc;
  }
  std::vector<std::uint32_t> idx(g.rows);
  std::iota(idx.begin(), idx.end(), 0u);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return logit[a] > logit[b]; });
  const double top = logit[idx[0]];
  double denom = 0.0;
  for (std::size_t i = 0; i < k; ++i) denom += std::exp(logit[idx[i]] - top);
  std::vector<Selected> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back({idx[i], std::exp(logit[idx[i]] - top) / denom});
  return out;
}

/// Pure-policy cache driven by integer statistics. Victim: the smallest
/// (signal, layer, expert) tuple among eligible members.
class ReferenceCache {
 public:
  ReferenceCache(std::size_t n_layers, std::size_t n_experts, PolicyKind kind, std::size_t cap_high,
                 std::size_t cap_low)
      : L_(n_layers), E_(n_experts), kind_(kind), cap_{cap_high, cap_low},
        resident_(2, std::vector<bool>(n_layers * n_experts, false)),
        last_(n_layers * n_experts, 0), uses_(n_layers * n_experts, 0),
        high_(n_layers * n_experts, 0) {}

  void new_token() { ++T_; }

  std::optional<Precision> lookup(ExpertKey k, Precision want) const {
    if (resident_[0][id(k)]) return Precision::High;
    if (want == Precision::Low && resident_[1][id(k)]) return Precision::Low;
    return std::nullopt;
  }

  void use(ExpertKey k, Precision served) {
    last_[id(k)] = T_;
    uses_[id(k)] += 1;
    if (served == Precision::High) high_[id(k)] += 1;
  }

  /// Returns the evicted key, if any. `current` marks the layer being run;
  /// its selected experts are passed in `busy` and never evicted.
  std::optional<ExpertKey> insert(ExpertKey k, Precision p, std::size_t current,
                                  const std::vector<ExpertKey>& busy) {
    const int pool = p == Precision::High ? 0 : 1;
    std::size_t count = 0;
    for (bool b : resident_[pool]) count += b;
    std::optional<ExpertKey> victim;
    if (count >= cap_[pool]) {
      std::int64_t best = std::numeric_limits<std::int64_t>::max();
      for (std::uint32_t l = 0; l < L_; ++l)
        for (std::uint32_t e = 0; e < E_; ++e) {
          const ExpertKey c{l, e};
          if (!resident_[pool][id(c)]) continue;
          if (std::find(busy.begin(), busy.end(), c) != busy.end()) continue;
          const std::int64_t s = signal(c, current);
          if (s < best) {
            best = s;
            victim = c;
          }
        }
      if (!victim) throw std::runtime_error("reference cache: nothing evictable");
      resident_[pool][id(*victim)] = false;
    }
    resident_[pool][id(k)] = true;
    use(k, p);
    return victim;
  }

 private:
  std::size_t id(ExpertKey k) const { return k.layer * E_ + k.expert; }

  std::int64_t signal(ExpertKey c, std::size_t current) const {
    switch (kind_) {
      case PolicyKind::LRU: return static_cast<std::int64_t>(last_[id(c)]);
      case PolicyKind::LFU: return static_cast<std::int64_t>(uses_[id(c)]);
      case PolicyKind::LHU: return static_cast<std::int64_t>(high_[id(c)]);
      case PolicyKind::FLD: {
        // Farther ahead in execution order means lower priority.
        const std::size_t ahead = (c.layer + L_ - current) % L_;
        return -static_cast<std::int64_t>(ahead);
      }
      default: throw std::logic_error("reference cache: pure policies only");
    }
  }

  std::size_t L_, E_;
  PolicyKind kind_;
  std::size_t cap_[2];
  std::vector<std::vector<bool>> resident_;
  std::vector<std::uint64_t> last_, uses_, high_;
  std::uint64_t T_ = 0;
};

/// Straight-line replay of a full simulation, producing the event stream.
///
/// Transfers are kept in one flat list and the next one to run is found by
/// scanning it each time; there is no queue object. Supports deterministic
/// policies and prewarm off.
class Replay {
 public:
  Replay(const Trace& trace, const RunConfig& cfg)
      : tr_(trace), cfg_(cfg), L_(trace.model.n_layers), E_(trace.model.n_experts),
        w_(effective_weights(cfg.cache.policy, cfg.cache.weights)) {
    if (cfg.cache.policy == PolicyKind::Random || cfg.prewarm)
      throw std::logic_error("replay oracle: deterministic runs without prewarm only");
    reset_records();
    in_pool_[0].assign(L_ * E_, false);
    in_pool_[1].assign(L_ * E_, false);
    masked_.assign(L_ * E_, false);
  }

  std::vector<SimEvent> run() {
    for (const auto& seq : tr_.sequences) {
      if (cfg_.sequence_level_records) reset_records();
      ++T_;
      for (std::size_t l = 0; l < L_; ++l) {
        std::vector<std::vector<float>> xs;
        for (const auto& tok : seq.prompt) xs.push_back(input(tok, l));
        layer(l, xs);
      }
      for (const auto& tok : seq.decode) {
        ++T_;
        for (std::size_t l = 0; l < L_; ++l) layer(l, {input(tok, l)});
      }
    }
    return events_;
  }

  double stall_total = 0.0;
  double miss_penalty = 0.0;
  double clock = 0.0;

 private:
  struct Job {
    ExpertKey key;
    Precision prec;
    bool demand;
    double issued;
    std::int64_t step;
    std::int64_t order;
    enum State { Waiting, Running, Done, Dropped } state = Waiting;
    double start = 0.0, finish = 0.0;
  };

  std::vector<float> input(const TokenInputs& tok, std::size_t l) const {
    const auto s = tok.layer(l, tr_.model.d_model);
    return {s.begin(), s.end()};
  }

  std::size_t id(ExpertKey k) const { return k.layer * E_ + k.expert; }

  void reset_records() {
    last_.assign(L_ * E_, 0);
    uses_.assign(L_ * E_, 0);
    high_.assign(L_ * E_, 0);
    T_ = 0;
  }

  void record(ExpertKey k, Precision p) {
    last_[id(k)] = T_;
    uses_[id(k)] += 1;
    if (p == Precision::High) high_[id(k)] += 1;
  }

  double prio(ExpertKey k, std::size_t cur) const {
    double p = 0.0;
    if (T_ > 0) {
      const double T = static_cast<double>(T_);
      p += w_.lru * (static_cast<double>(last_[id(k)]) / T);
      p += w_.lfu * (static_cast<double>(uses_[id(k)]) / T);
      p += w_.lhu * (static_cast<double>(high_[id(k)]) / T);
    }
    const std::size_t dist = (k.layer + L_ - cur) % L_;
    p += w_.fld * (1.0 - static_cast<double>(dist) / static_cast<double>(L_));
    return p;
  }

  std::size_t pool_size(int pool) const {
    return static_cast<std::size_t>(std::count(in_pool_[pool].begin(), in_pool_[pool].end(), true));
  }

  std::optional<ExpertKey> victim(int pool, bool honor_masks, bool honor_busy = true) const {
    std::optional<ExpertKey> best;
    double best_p = 0.0;
    for (std::uint32_t l = 0; l < L_; ++l)
      for (std::uint32_t e = 0; e < E_; ++e) {
        const ExpertKey c{l, e};
        if (!in_pool_[pool][id(c)]) continue;
        if (honor_masks && masked_[id(c)]) continue;
        if (honor_busy && std::find(busy_.begin(), busy_.end(), c) != busy_.end()) continue;
        const double p = prio(c, cur_layer_);
        if (!best || p < best_p) {
          best = c;
          best_p = p;
        }
      }
    return best;
  }

  // Puts a finished transfer into its pool.
  void land(const Job& j) {
    const int pool = j.prec == Precision::High ? 0 : 1;
    if (in_pool_[pool][id(j.key)]) return;
    std::optional<ExpertKey> out;
    bool overridden = false;
    if (pool_size(pool) >= (pool == 0 ? cfg_.cache.cap_high : cfg_.cache.cap_low)) {
      out = victim(pool, true);
      if (!out && j.demand) {
        out = victim(pool, false);
        overridden = out.has_value();
      }
      if (!out && j.demand) out = victim(pool, false, false);
      if (!out) {
        if (j.demand) throw std::runtime_error("replay: demand load cannot be placed");
        emit(EventKind::Drop, j.step, j.finish, j.key, j.prec, j.demand, j.start);
        return;
      }
      in_pool_[pool][id(*out)] = false;
      masked_[id(*out)] = false;
    }
    in_pool_[pool][id(j.key)] = true;
    if (j.demand) record(j.key, j.prec);
    emit(EventKind::Load, j.step, j.finish, j.key, j.prec, j.demand, j.start);
    if (overridden) emit(EventKind::MaskOverride, j.step, j.finish, *out, j.prec, j.demand, 0.0);
    if (out) emit(EventKind::Evict, j.step, j.finish, *out, j.prec, j.demand, 0.0);
  }

  void emit(EventKind kind, std::int64_t step, double t, ExpertKey k, Precision p, bool demand,
            double v) {
    events_.push_back({kind, step, t, k, p, demand ? TaskKind::OnDemand : TaskKind::Prefetch, v});
  }

  Job* running() {
    for (auto& j : jobs_)
      if (j.state == Job::Running) return &j;
    return nullptr;
  }

  Job* next_waiting() {
    Job* best = nullptr;
    for (auto& j : jobs_) {
      if (j.state != Job::Waiting) continue;
      if (!best || (j.demand && !best->demand) || (j.demand == best->demand && j.order < best->order))
        best = &j;
    }
    return best;
  }

  void submit(ExpertKey k, Precision p, bool demand, std::int64_t step) {
    for (auto& j : jobs_) {
      if ((j.state != Job::Running && j.state != Job::Waiting) || j.key != k || j.prec != p) continue;
      if (demand && !j.demand) {
        j.demand = true;
        j.step = step;
        if (j.state == Job::Waiting) {
          j.issued = clock;
          j.order = next_order_++;
        }
      }
      return;
    }
    jobs_.push_back({k, p, demand, clock, step, next_order_++});
  }

  // Moves the link forward to `until`; finished transfers are returned in
  // completion order.
  std::vector<Job> run_link(double until, bool only_demand) {
    std::vector<Job> finished;
    for (;;) {
      if (only_demand) {
        const bool pending = std::any_of(jobs_.begin(), jobs_.end(), [](const Job& j) {
          return j.demand && (j.state == Job::Waiting || j.state == Job::Running);
        });
        if (!pending) break;
      }
      Job* r = running();
      while (!r) {
        Job* n = next_waiting();
        if (!n) break;
        const double start = std::max(link_free_, n->issued);
        if (start > until) break;
        if (!n->demand && n->step <= front_) {
          n->state = Job::Dropped;
          ++dropped_;
          continue;
        }
        n->state = Job::Running;
        n->start = start;
        n->finish = start + load_time(n->prec, cfg_.cost);
        r = n;
      }
      if (!r || r->finish > until) break;
      r->state = Job::Done;
      link_free_ = r->finish;
      finished.push_back(*r);
    }
    std::erase_if(jobs_, [](const Job& j) { return j.state == Job::Done || j.state == Job::Dropped; });
    return finished;
  }

  void layer(std::size_t l, const std::vector<std::vector<float>>& xs) {
    const auto& m = tr_.model;
    const auto& c = cfg_.cost;
    clock += c.attn_compute_ms + c.gate_compute_ms;
    for (const auto& j : run_link(clock, false)) land(j);
    front_ = step_;

    // Strongest requested precision per expert, first-seen order.
    std::vector<std::pair<ExpertKey, int>> need;  // 0 high, 1 low, 2 skip
    for (const auto& x : xs) {
      const auto sel = sequential_gate(x, tr_.gates[l], m.top_k);
      double before = 0.0;
      for (std::size_t r = 0; r < sel.size(); ++r) {
        int d = 0;
        if (cfg_.dynamic_loading && r > 0)
          d = before <= cfg_.thresholds.t1 ? 0 : before <= cfg_.thresholds.t2 ? 1 : 2;
        before += sel[r].weight;
        const ExpertKey k{static_cast<std::uint32_t>(l), sel[r].expert};
        auto it = std::find_if(need.begin(), need.end(), [&](auto& n) { return n.first == k; });
        if (it == need.end())
          need.push_back({k, d});
        else
          it->second = std::min(it->second, d);
      }
    }
    cur_layer_ = l;
    busy_.clear();
    for (const auto& [k, d] : need)
      if (d != 2) busy_.push_back(k);

    std::vector<std::pair<ExpertKey, Precision>> missing;
    for (const auto& [k, d] : need) {
      if (d == 2) continue;
      const Precision want = d == 0 ? Precision::High : Precision::Low;
      std::optional<Precision> got;
      if (in_pool_[0][id(k)])
        got = Precision::High;
      else if (want == Precision::Low && in_pool_[1][id(k)])
        got = Precision::Low;
      if (got) {
        record(k, *got);
      } else {
        miss_penalty += want == Precision::High ? 1.0 : c.bits.ratio();
        emit(EventKind::Miss, step_, clock, k, want, true, 0.0);
        missing.push_back({k, want});
      }
    }

    if (cfg_.prefetching && cfg_.lookahead > 0 && l + 1 < L_) {
      const std::size_t last = std::min(l + cfg_.lookahead, L_ - 1);
      std::vector<ExpertKey> walked;
      std::optional<std::vector<ExpertKey>> target;
      std::size_t target_layer = 0;
      for (std::size_t j = l + 1; j <= last && !target; ++j) {
        std::vector<ExpertKey> predicted;
        for (const auto& x : xs)
          for (const auto& s : sequential_gate(x, tr_.gates[j], m.top_k))
            predicted.push_back({static_cast<std::uint32_t>(j), s.expert});
        std::sort(predicted.begin(), predicted.end());
        predicted.erase(std::unique(predicted.begin(), predicted.end()), predicted.end());
        walked.insert(walked.end(), predicted.begin(), predicted.end());
        for (const auto& k : predicted)
          if (!in_pool_[0][id(k)]) {
            target = predicted;
            target_layer = j;
            break;
          }
      }
      for (const auto& k : walked) masked_[id(k)] = true;
      if (target) {
        const std::int64_t step = step_ + static_cast<std::int64_t>(target_layer - l);
        for (const auto& k : *target) {
          if (!in_pool_[1][id(k)] && !in_pool_[0][id(k)]) submit(k, Precision::Low, false, step);
          if (!in_pool_[0][id(k)]) submit(k, Precision::High, false, step);
        }
      }
    }

    for (const auto& [k, p] : missing) submit(k, p, true, step_);
    double ready = clock;
    const auto done = run_link(std::numeric_limits<double>::infinity(), true);
    for (const auto& j : done)
      if (j.demand) ready = std::max(ready, j.finish);
    for (const auto& j : done) land(j);
    const double stall = ready - clock;
    if (stall > 0.0) {
      emit(EventKind::Stall, step_, clock, {}, Precision::High, true, stall);
      stall_total += stall;
    }
    clock += stall;
    clock += c.expert_compute_ms * static_cast<double>(busy_.size());
    for (std::uint32_t ll = 0; ll <= l; ++ll)
      for (std::uint32_t e = 0; e < E_; ++e) masked_[id({ll, e})] = false;
    ++step_;
  }

  const Trace& tr_;
  RunConfig cfg_;
  std::size_t L_, E_;
  PolicyWeights w_;
  std::vector<bool> in_pool_[2];
  std::vector<bool> masked_;
  std::vector<std::uint64_t> last_, uses_, high_;
  std::uint64_t T_ = 0;
  std::vector<Job> jobs_;
  std::int64_t next_order_ = 0;
  double link_free_ = 0.0;
  std::int64_t step_ = 0;
  std::int64_t front_ = -1;
  std::size_t cur_layer_ = 0;
  std::vector<ExpertKey> busy_;
  std::vector<SimEvent> events_;
  std::size_t dropped_ = 0;
};

}  // namespace oracle
