#pragma once

#include <algorithm>
#include <concepts>
#include <optional>
#include <span>
#include <vector>

#include "moesim/gating.hpp"

namespace moesim {

/// Anything that can answer "is this precision of this expert resident".
template <class C>
concept CacheView = requires(const C& c, ExpertKey k, Precision p) {
  { c.has(k, p) } -> std::convertible_to<bool>;
};

/// Evaluates the same gating input against several layers' gates in one
/// pass over a stacked matrix. Output j equals compute_gate(x, gates[j]).
inline std::vector<GateOutcome> stacked_lookahead(std::span<const float> x,
                                                  std::span<const GateMatrix> gates,
                                                  std::size_t top_k) {
  if (gates.empty()) throw InputError("stacked_lookahead: no gate matrices");
  std::size_t total_rows = 0;
  for (const auto& g : gates) {
    if (g.cols != x.size())
      throw InputError("stacked_lookahead: gate for layer " + std::to_string(g.layer) +
                       " does not match the input dimension");
    if (top_k < 1 || top_k > g.rows) throw InputError("top_k out of range for gate matrix");
    total_rows += g.rows;
  }

  std::vector<float> stacked;
  stacked.reserve(total_rows * x.size());
  for (const auto& g : gates) stacked.insert(stacked.end(), g.weights.begin(), g.weights.end());

  const std::span<const float> all(stacked);
  std::vector<double> logits(total_rows);
  for (std::size_t r = 0; r < total_rows; ++r)
    logits[r] = detail::dot(all.subspan(r * x.size(), x.size()), x);

  std::vector<GateOutcome> out;
  out.reserve(gates.size());
  std::size_t offset = 0;
  for (const auto& g : gates) {
    out.push_back(detail::select_top_k(std::span<const double>(logits).subspan(offset, g.rows),
                                       g.layer, top_k));
    offset += g.rows;
  }
  return out;
}

struct LookaheadLayer {
  std::size_t layer = 0;
  std::vector<GateOutcome> outcomes;  // one per gating input
  std::vector<ExpertKey> experts;     // sorted union of predicted experts
};

struct LookaheadPrediction {
  std::size_t origin_layer = 0;
  std::vector<LookaheadLayer> layers;  // walked lookahead layers, in order
  std::optional<std::size_t> chosen_prefetch_layer;
  std::vector<ExpertKey> masked;

  const LookaheadLayer* chosen() const {
    if (!chosen_prefetch_layer) return nullptr;
    for (const auto& l : layers)
      if (l.layer == *chosen_prefetch_layer) return &l;
    return nullptr;
  }
};

/// A predicted expert counts as resident when its high-precision version is
/// cached, since that copy serves requests of either precision.
template <CacheView C>
bool predicted_resident(const C& cache, ExpertKey k) {
  return cache.has(k, Precision::High);
}

/// Predicts experts for up to `lookahead` following layers from the current
/// gating inputs (one per token; prefill passes several) and picks the first
/// lookahead layer with a non-resident prediction as the prefetch target.
/// Every walked layer's predictions are returned in `masked`.
template <CacheView C>
LookaheadPrediction adaptive_predict(std::span<const std::span<const float>> inputs,
                                     std::size_t layer, std::size_t lookahead,
                                     std::span<const GateMatrix> gates, std::size_t top_k,
                                     const C& cache) {
  LookaheadPrediction pred;
  pred.origin_layer = layer;
  if (lookahead == 0 || inputs.empty() || layer + 1 >= gates.size()) return pred;
  const std::size_t last = std::min(layer + lookahead, gates.size() - 1);
  const auto window = gates.subspan(layer + 1, last - layer);

  std::vector<std::vector<GateOutcome>> per_input;
  per_input.reserve(inputs.size());
  for (const auto& x : inputs) per_input.push_back(stacked_lookahead(x, window, top_k));

  for (std::size_t j = 0; j < window.size(); ++j) {
    LookaheadLayer ll;
    ll.layer = window[j].layer;
    for (auto& outs : per_input) {
      for (const auto& r : outs[j].ranked) ll.experts.push_back(r.key);
      ll.outcomes.push_back(std::move(outs[j]));
    }
    std::sort(ll.experts.begin(), ll.experts.end());
    ll.experts.erase(std::unique(ll.experts.begin(), ll.experts.end()), ll.experts.end());

    pred.masked.insert(pred.masked.end(), ll.experts.begin(), ll.experts.end());
    const bool all_resident = std::all_of(ll.experts.begin(), ll.experts.end(),
                                          [&](ExpertKey k) { return predicted_resident(cache, k); });
    pred.layers.push_back(std::move(ll));
    if (!all_resident) {
      pred.chosen_prefetch_layer = pred.layers.back().layer;
      break;
    }
  }
  std::sort(pred.masked.begin(), pred.masked.end());
  pred.masked.erase(std::unique(pred.masked.begin(), pred.masked.end()), pred.masked.end());
  return pred;
}

template <CacheView C>
LookaheadPrediction adaptive_predict(std::span<const float> x, std::size_t layer,
                                     std::size_t lookahead, std::span<const GateMatrix> gates,
                                     std::size_t top_k, const C& cache) {
  const std::span<const float> one[] = {x};
  return adaptive_predict(std::span<const std::span<const float>>(one), layer, lookahead, gates,
                          top_k, cache);
}

}  // namespace moesim
