#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "moesim/model.hpp"

namespace moesim {

/// Mixing weights of the recency, frequency, high-precision frequency and
/// layer-distance priority terms. They sum to 1.
struct PolicyWeights {
  double lru = 0.25;
  double lfu = 0.25;
  double lhu = 0.25;
  double fld = 0.25;

  void validate() const {
    if (lru < 0 || lfu < 0 || lhu < 0 || fld < 0)
      throw InputError("policy weights must be nonnegative");
    if (std::abs(lru + lfu + lhu + fld - 1.0) > 1e-9)
      throw InputError("policy weights must sum to 1");
  }

  std::array<double, 4> as_array() const { return {lru, lfu, lhu, fld}; }

  friend bool operator==(const PolicyWeights&, const PolicyWeights&) = default;
};

enum class PolicyKind : std::uint8_t { Random, LRU, LFU, LHU, FLD, Weighted };

inline const char* to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::Random: return "random";
    case PolicyKind::LRU: return "lru";
    case PolicyKind::LFU: return "lfu";
    case PolicyKind::LHU: return "lhu";
    case PolicyKind::FLD: return "fld";
    case PolicyKind::Weighted: return "weighted";
  }
  return "?";
}

inline PolicyKind parse_policy(const std::string& s) {
  for (auto k : {PolicyKind::Random, PolicyKind::LRU, PolicyKind::LFU, PolicyKind::LHU,
                 PolicyKind::FLD, PolicyKind::Weighted})
    if (s == to_string(k)) return k;
  throw InputError("unknown cache policy '" + s + "'");
}

/// The pure policies are corners of the weight simplex.
inline PolicyWeights effective_weights(PolicyKind kind, const PolicyWeights& custom) {
  switch (kind) {
    case PolicyKind::LRU: return {1, 0, 0, 0};
    case PolicyKind::LFU: return {0, 1, 0, 0};
    case PolicyKind::LHU: return {0, 0, 1, 0};
    case PolicyKind::FLD: return {0, 0, 0, 1};
    default: return custom;
  }
}

/// Per-sequence usage record: last-used token, use count and high-precision
/// use count per expert, plus the current token number T.
class PriorityRecord {
 public:
  struct Entry {
    std::uint64_t last_used = 0;
    std::uint64_t uses = 0;
    std::uint64_t high_uses = 0;
  };

  PriorityRecord(std::size_t n_layers, std::size_t n_experts)
      : n_experts_(n_experts), entries_(n_layers * n_experts) {}

  const Entry& at(ExpertKey k) const { return entries_.at(flat_index(k, n_experts_)); }
  std::uint64_t token() const { return token_; }

  void begin_token() { ++token_; }

  void record_use(ExpertKey k, Precision p) {
    Entry& e = entries_.at(flat_index(k, n_experts_));
    e.last_used = token_;
    ++e.uses;
    if (p == Precision::High) ++e.high_uses;
  }

  void reset() {
    std::fill(entries_.begin(), entries_.end(), Entry{});
    token_ = 0;
  }

  /// Test hook for building records with exact counts.
  void set(ExpertKey k, Entry e) { entries_.at(flat_index(k, n_experts_)) = e; }
  void set_token(std::uint64_t t) { token_ = t; }

 private:
  std::size_t n_experts_;
  std::vector<Entry> entries_;
  std::uint64_t token_ = 0;
};

/// Layer-distance term: 1 for the current layer, falling as the expert's
/// layer lies further ahead in execution order (modulo the layer count).
inline double fld_term(std::size_t expert_layer, std::size_t current_layer, std::size_t n_layers) {
  const std::size_t dist = (expert_layer + n_layers - current_layer) % n_layers;
  return 1.0 - static_cast<double>(dist) / static_cast<double>(n_layers);
}

/// Eviction priority (higher is kept longer). Usage terms are 0 while T = 0.
inline double priority(ExpertKey t, const PriorityRecord& record, const PolicyWeights& w,
                       std::size_t current_layer, std::size_t n_layers) {
  double p = 0.0;
  if (record.token() > 0) {
    const auto& e = record.at(t);
    const double T = static_cast<double>(record.token());
    p += w.lru * (static_cast<double>(e.last_used) / T);
    p += w.lfu * (static_cast<double>(e.uses) / T);
    p += w.lhu * (static_cast<double>(e.high_uses) / T);
  }
  p += w.fld * fld_term(t.layer, current_layer, n_layers);
  return p;
}

struct CacheConfig {
  std::size_t cap_high = 64;
  std::size_t cap_low = 32;
  PolicyKind policy = PolicyKind::Weighted;
  PolicyWeights weights{};
  std::uint64_t seed = 0;  // drives the Random policy only
};

struct LookupResult {
  std::optional<Precision> served;
  bool hit() const { return served.has_value(); }
};

struct InsertOptions {
  bool record_use = true;
  // When only masks block every candidate, evict the lowest-priority masked
  // member instead of failing. Used for on-demand loads.
  bool masks_yield = false;
  // Last resort when the current layer's own experts fill the pool (a
  // prefill layer needing more experts than fit): evict the lowest-priority
  // one of them. Implies masks_yield.
  bool exclude_yields = false;
};

struct InsertResult {
  std::optional<ExpertKey> evicted;
  bool mask_overridden = false;
  bool exclude_overridden = false;
};

/// Two precision-segregated expert pools sharing one priority record.
class ExpertCache {
 public:
  ExpertCache(const ModelSpec& model, CacheConfig cfg)
      : n_layers_(model.n_layers),
        n_experts_(model.n_experts),
        cfg_(cfg),
        weights_(effective_weights(cfg.policy, cfg.weights)),
        record_(model.n_layers, model.n_experts),
        rng_(cfg.seed) {
    weights_.validate();
    if (cfg.cap_high == 0 || cfg.cap_low == 0)
      throw InputError("cache capacities must be positive");
  }

  const CacheConfig& config() const { return cfg_; }
  const PolicyWeights& weights() const { return weights_; }
  const PriorityRecord& record() const { return record_; }
  PriorityRecord& record() { return record_; }

  const std::set<ExpertKey>& pool(Precision p) const {
    return p == Precision::High ? high_ : low_;
  }
  std::size_t capacity(Precision p) const {
    return p == Precision::High ? cfg_.cap_high : cfg_.cap_low;
  }

  bool has(ExpertKey k, Precision p) const { return pool(p).contains(k); }

  /// A low-precision request may be served by a cached high version; a
  /// high-precision request only by the high pool.
  LookupResult lookup(ExpertKey k, Precision wanted) const {
    if (high_.contains(k)) return {Precision::High};
    if (wanted == Precision::Low && low_.contains(k)) return {Precision::Low};
    return {};
  }

  void on_use(ExpertKey k, Precision served) {
    if (!has(k, served))
      throw std::logic_error("on_use: expert not resident in the serving pool");
    record_.record_use(k, served);
  }

  double priority_of(ExpertKey k, std::size_t current_layer) const {
    return priority(k, record_, weights_, current_layer, n_layers_);
  }

  /// Inserts `k` into the pool for `p`, evicting the lowest-priority eligible
  /// member when full. Masked experts and `exclude` are never victims.
  InsertResult insert(ExpertKey k, Precision p, std::size_t current_layer,
                      std::span<const ExpertKey> exclude, InsertOptions opt = {}) {
    auto& target = pool_mut(p);
    if (target.contains(k)) throw std::logic_error("insert: expert already resident");
    InsertResult result;
    if (target.size() >= capacity(p)) {
      auto victim = pick_victim(target, current_layer, exclude, /*respect_masks=*/true);
      if (!victim && (opt.masks_yield || opt.exclude_yields)) {
        victim = pick_victim(target, current_layer, exclude, /*respect_masks=*/false);
        result.mask_overridden = victim.has_value();
      }
      if (!victim && opt.exclude_yields) {
        victim = pick_victim(target, current_layer, {}, /*respect_masks=*/false);
        result.exclude_overridden = victim.has_value();
      }
      if (!victim)
        throw CapacityError(std::string("no evictable expert in the ") + to_string(p) +
                            "-precision pool (capacity " + std::to_string(capacity(p)) + ")");
      target.erase(*victim);
      masked_.erase(*victim);
      result.evicted = victim;
    }
    target.insert(k);
    if (opt.record_use) record_.record_use(k, p);
    return result;
  }

  /// Starts a new sequence: usage records and T return to zero.
  void reset_sequence() { record_.reset(); }
  void begin_token() { record_.begin_token(); }

  void mask(std::span<const ExpertKey> keys) { masked_.insert(keys.begin(), keys.end()); }
  bool is_masked(ExpertKey k) const { return masked_.contains(k); }
  const std::set<ExpertKey>& masked() const { return masked_; }
  void expire_masks_through(std::size_t layer) {
    std::erase_if(masked_, [&](const ExpertKey& k) { return k.layer <= layer; });
  }
  void clear_masks() { masked_.clear(); }

 private:
  std::set<ExpertKey>& pool_mut(Precision p) { return p == Precision::High ? high_ : low_; }

  std::optional<ExpertKey> pick_victim(const std::set<ExpertKey>& pool, std::size_t current_layer,
                                       std::span<const ExpertKey> exclude, bool respect_masks) {
    std::vector<ExpertKey> eligible;
    for (const auto& k : pool) {
      if (respect_masks && masked_.contains(k)) continue;
      if (std::find(exclude.begin(), exclude.end(), k) != exclude.end()) continue;
      eligible.push_back(k);
    }
    if (eligible.empty()) return std::nullopt;
    if (cfg_.policy == PolicyKind::Random) {
      std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
      return eligible[pick(rng_)];
    }
    // `eligible` is ascending, so strict comparison keeps the lower key on ties.
    std::optional<ExpertKey> best;
    double best_p = 0.0;
    for (const auto& k : eligible) {
      const double p = priority_of(k, current_layer);
      if (!best || p < best_p) {
        best = k;
        best_p = p;
      }
    }
    return best;
  }

  std::size_t n_layers_;
  std::size_t n_experts_;
  CacheConfig cfg_;
  PolicyWeights weights_;
  PriorityRecord record_;
  std::set<ExpertKey> high_;
  std::set<ExpertKey> low_;
  std::set<ExpertKey> masked_;
  std::mt19937_64 rng_;
};

}  // namespace moesim
