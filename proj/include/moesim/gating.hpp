#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "moesim/model.hpp"

namespace moesim {

/// Router parameters for one layer: row-major n_experts x d_model.
struct GateMatrix {
  std::size_t layer = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> weights;

  std::span<const float> row(std::size_t e) const {
    return std::span<const float>(weights).subspan(e * cols, cols);
  }

  void validate(const ModelSpec& model) const {
    if (rows != model.n_experts || cols != model.d_model || weights.size() != rows * cols)
      throw InputError("gate matrix for layer " + std::to_string(layer) +
                       " does not match the model shape");
  }
};

struct RankedExpert {
  ExpertKey key;
  double weight = 0.0;
};

/// Top-k routing result for one token at one layer, sorted by weight descending.
struct GateOutcome {
  std::size_t layer = 0;
  std::vector<RankedExpert> ranked;
};

enum class Decision : std::uint8_t { High, Low, Skip };

inline const char* to_string(Decision d) {
  switch (d) {
    case Decision::High: return "high";
    case Decision::Low: return "low";
    case Decision::Skip: return "skip";
  }
  return "?";
}

using PrecisionDecision = std::vector<Decision>;

namespace detail {

inline double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

// Picks top_k entries of `logits` (ties to the lower index) and normalizes
// them with a softmax over the selected logits only.
inline GateOutcome select_top_k(std::span<const double> logits, std::size_t layer,
                                std::size_t top_k) {
  std::vector<std::uint32_t> order(logits.size());
  std::iota(order.begin(), order.end(), 0u);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top_k),
                    order.end(), [&](std::uint32_t a, std::uint32_t b) {
                      if (logits[a] != logits[b]) return logits[a] > logits[b];
                      return a < b;
                    });
  GateOutcome out;
  out.layer = layer;
  out.ranked.reserve(top_k);
  const double max_logit = logits[order[0]];
  double denom = 0.0;
  for (std::size_t i = 0; i < top_k; ++i) denom += std::exp(logits[order[i]] - max_logit);
  for (std::size_t i = 0; i < top_k; ++i) {
    out.ranked.push_back({ExpertKey{static_cast<std::uint32_t>(layer), order[i]},
                          std::exp(logits[order[i]] - max_logit) / denom});
  }
  return out;
}

}  // namespace detail

inline GateOutcome compute_gate(std::span<const float> x, const GateMatrix& gate,
                                std::size_t top_k) {
  if (x.size() != gate.cols)
    throw InputError("gating input has dimension " + std::to_string(x.size()) + ", expected " +
                     std::to_string(gate.cols));
  if (top_k < 1 || top_k > gate.rows) throw InputError("top_k out of range for gate matrix");
  std::vector<double> logits(gate.rows);
  for (std::size_t e = 0; e < gate.rows; ++e) logits[e] = detail::dot(gate.row(e), x);
  return detail::select_top_k(logits, gate.layer, top_k);
}

/// Cumulative weight of all higher-ranked experts; rank 0 scores 0.
inline std::vector<double> unimportance_scores(const GateOutcome& g) {
  std::vector<double> scores(g.ranked.size(), 0.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < g.ranked.size(); ++i) {
    scores[i] = acc;
    acc += g.ranked[i].weight;
  }
  return scores;
}

struct Thresholds {
  double t1 = 0.6;
  double t2 = 0.9;

  void validate() const {
    if (!(0.0 <= t1 && t1 <= t2 && t2 <= 1.0))
      throw InputError("thresholds: require 0 <= t1 <= t2 <= 1");
  }
};

inline PrecisionDecision classify_precision(std::span<const double> scores, Thresholds th) {
  th.validate();
  PrecisionDecision out;
  out.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = scores[i];
    if (i == 0 || s <= th.t1)
      out.push_back(Decision::High);
    else if (s <= th.t2)
      out.push_back(Decision::Low);
    else
      out.push_back(Decision::Skip);
  }
  return out;
}

inline PrecisionDecision all_high(std::size_t n) { return PrecisionDecision(n, Decision::High); }

}  // namespace moesim
