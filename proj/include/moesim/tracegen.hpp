#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "moesim/trace.hpp"

namespace moesim {

/// Portable Gaussian source. std::normal_distribution is implementation
/// defined, so traces would differ between standard libraries.
class GaussianSource {
 public:
  explicit GaussianSource(std::uint64_t seed) : engine_(seed) {}

  double uniform() {
    // 53 random bits in (0, 1).
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() {
    if (spare_) {
      const double v = *spare_;
      spare_.reset();
      return v;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double theta = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(theta);
    return r * std::cos(theta);
  }

  std::vector<double> normal_vector(std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = normal();
    return v;
  }

  std::vector<double> unit_vector(std::size_t n) {
    for (;;) {
      auto v = normal_vector(n);
      if (normalize(v)) return v;
    }
  }

  static bool normalize(std::vector<double>& v) {
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    if (!(n2 > 0.0)) return false;
    const double inv = 1.0 / std::sqrt(n2);
    for (double& x : v) x *= inv;
    return true;
  }

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

namespace detail {

// a*u + b*v, renormalized; falls back to u if the mix cancels out.
inline std::vector<double> mix_unit(const std::vector<double>& u, double a,
                                    const std::vector<double>& v, double b) {
  std::vector<double> out(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = a * u[i] + b * v[i];
  if (!GaussianSource::normalize(out)) return u;
  return out;
}

// Rows are orthonormal when n_experts <= d_model (so an isotropic input picks
// every expert equally often), unit-norm otherwise; then scaled so logits of
// a unit input have standard deviation `logit_std`.
inline GateMatrix random_gate(std::size_t layer, const ModelSpec& m, double logit_std,
                              GaussianSource& rng) {
  std::vector<std::vector<double>> rows;
  for (std::size_t e = 0; e < m.n_experts; ++e) {
    for (;;) {
      auto r = rng.normal_vector(m.d_model);
      if (m.n_experts <= m.d_model) {
        for (const auto& prev : rows) {
          double proj = 0.0;
          for (std::size_t i = 0; i < r.size(); ++i) proj += r[i] * prev[i];
          for (std::size_t i = 0; i < r.size(); ++i) r[i] -= proj * prev[i];
        }
      }
      if (GaussianSource::normalize(r)) {
        rows.push_back(std::move(r));
        break;
      }
    }
  }
  const double gain = logit_std * std::sqrt(static_cast<double>(m.d_model));
  GateMatrix g;
  g.layer = layer;
  g.rows = m.n_experts;
  g.cols = m.d_model;
  g.weights.reserve(g.rows * g.cols);
  for (const auto& r : rows)
    for (double v : r) g.weights.push_back(static_cast<float>(gain * v));
  return g;
}

}  // namespace detail

/// Cosine similarity between consecutive-layer gating inputs implied by the
/// mixing weight epsilon, for nearly orthogonal fresh noise.
inline double expected_layer_cosine(double epsilon) {
  const double a = epsilon, b = 1.0 - epsilon;
  return a / std::sqrt(a * a + b * b);
}

/// Synthesizes gating inputs for every token and layer.
///
/// Within a token, layer l+1's latent input mixes layer l's with a fresh
/// per-layer innovation (weight epsilon). Across tokens, layer 0's latent and
/// every layer's innovation mix with the previous token's (weight rho).
/// Each sequence draws a preference over experts per layer; its strength is
/// alpha. Gate matrices are drawn once per trace.
inline Trace generate(const TraceSpec& spec) {
  spec.validate();
  const ModelSpec& m = spec.model;
  GaussianSource rng(spec.seed);

  Trace trace;
  trace.model = m;
  trace.generator = spec;
  if (spec.shared_gates) {
    const GateMatrix shared = detail::random_gate(0, m, spec.gate_scale, rng);
    for (std::size_t l = 0; l < m.n_layers; ++l) {
      trace.gates.push_back(shared);
      trace.gates.back().layer = l;
    }
  } else {
    for (std::size_t l = 0; l < m.n_layers; ++l)
      trace.gates.push_back(detail::random_gate(l, m, spec.gate_scale, rng));
  }

  const double eps = spec.layer_similarity;
  const double rho = spec.token_locality;
  const double alpha = spec.affinity_skew;
  const std::size_t d = m.d_model;

  for (std::size_t s = 0; s < spec.n_sequences; ++s) {
    SequenceTrace seq;
    seq.id = static_cast<std::uint32_t>(s);

    // Per-layer preference direction: sum of gate rows weighted by N(0,1)
    // draws, so expert e's logit is pushed in proportion to its draw.
    std::vector<std::vector<double>> bias(m.n_layers, std::vector<double>(d, 0.0));
    if (alpha > 0.0) {
      for (std::size_t l = 0; l < m.n_layers; ++l) {
        const auto& g = trace.gates[l];
        const double gain = spec.gate_scale * std::sqrt(static_cast<double>(d));
        for (std::size_t e = 0; e < m.n_experts; ++e) {
          const double z = rng.normal();
          const auto row = g.row(e);
          for (std::size_t i = 0; i < d; ++i) bias[l][i] += z * static_cast<double>(row[i]) / gain;
        }
      }
    }

    std::vector<double> base;
    std::vector<std::vector<double>> innovation(m.n_layers);
    const std::size_t n_tokens = spec.prompt_len + spec.decode_len;
    for (std::size_t t = 0; t < n_tokens; ++t) {
      base = t == 0 ? rng.unit_vector(d) : detail::mix_unit(base, rho, rng.unit_vector(d), 1.0 - rho);
      TokenInputs tok;
      tok.data.reserve(m.n_layers * d);
      std::vector<double> h = base;
      for (std::size_t l = 0; l < m.n_layers; ++l) {
        if (l > 0) {
          innovation[l] = t == 0 ? rng.unit_vector(d)
                                 : detail::mix_unit(innovation[l], rho, rng.unit_vector(d), 1.0 - rho);
          if (eps < 1.0) h = detail::mix_unit(h, eps, innovation[l], 1.0 - eps);
        }
        std::vector<double> x = h;
        if (alpha > 0.0) {
          for (std::size_t i = 0; i < d; ++i) x[i] += alpha * bias[l][i];
          if (!GaussianSource::normalize(x)) x = h;
        }
        for (double v : x) tok.data.push_back(static_cast<float>(v));
      }
      (t < spec.prompt_len ? seq.prompt : seq.decode).push_back(std::move(tok));
    }
    trace.sequences.push_back(std::move(seq));
  }
  return trace;
}

inline double cosine(std::span<const float> a, std::span<const float> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += double(a[i]) * b[i];
    aa += double(a[i]) * a[i];
    bb += double(b[i]) * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

/// Mean cosine similarity of gating inputs `distance` layers apart.
inline double mean_layer_cosine(const Trace& trace, std::size_t distance = 1) {
  const std::size_t d = trace.model.d_model;
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : trace.sequences)
    for (const auto* part : {&s.prompt, &s.decode})
      for (const auto& tok : *part)
        for (std::size_t l = 0; l + distance < trace.model.n_layers; ++l) {
          sum += cosine(tok.layer(l, d), tok.layer(l + distance, d));
          ++n;
        }
  return n ? sum / static_cast<double>(n) : 0.0;
}

/// Fraction of (token, layer) pairs where gating layer l+distance with layer
/// l's input picks the same top-1 expert as its own input does.
inline double lookahead_top1_accuracy(const Trace& trace, std::size_t distance = 1) {
  const std::size_t d = trace.model.d_model;
  std::size_t hits = 0, n = 0;
  for (const auto& s : trace.sequences)
    for (const auto* part : {&s.prompt, &s.decode})
      for (const auto& tok : *part)
        for (std::size_t l = 0; l + distance < trace.model.n_layers; ++l) {
          const auto& gate = trace.gates[l + distance];
          const auto predicted = compute_gate(tok.layer(l, d), gate, 1);
          const auto actual = compute_gate(tok.layer(l + distance, d), gate, 1);
          hits += predicted.ranked[0].key == actual.ranked[0].key;
          ++n;
        }
  return n ? static_cast<double>(hits) / static_cast<double>(n) : 0.0;
}

/// Gated-FFN expert: W2 (silu(W1 x) * (W3 x)).
struct ToyExpert {
  std::size_t d_model = 0;
  std::size_t d_ff = 0;
  std::vector<double> w1;  // d_ff x d_model
  std::vector<double> w3;  // d_ff x d_model
  std::vector<double> w2;  // d_model x d_ff

  static ToyExpert random(std::size_t d_model, std::size_t d_ff, GaussianSource& rng) {
    ToyExpert e{d_model, d_ff, {}, {}, {}};
    const double s_in = 1.0 / std::sqrt(static_cast<double>(d_model));
    const double s_ff = 1.0 / std::sqrt(static_cast<double>(d_ff));
    for (std::size_t i = 0; i < d_ff * d_model; ++i) e.w1.push_back(s_in * rng.normal());
    for (std::size_t i = 0; i < d_ff * d_model; ++i) e.w3.push_back(s_in * rng.normal());
    for (std::size_t i = 0; i < d_model * d_ff; ++i) e.w2.push_back(s_ff * rng.normal());
    return e;
  }
};

inline double silu(double v) { return v / (1.0 + std::exp(-v)); }

inline std::vector<double> toy_expert_eval(std::span<const float> x, const ToyExpert& e) {
  if (x.size() != e.d_model || e.w1.size() != e.d_ff * e.d_model ||
      e.w3.size() != e.d_ff * e.d_model || e.w2.size() != e.d_model * e.d_ff)
    throw InputError("toy expert: shape mismatch");
  std::vector<double> hidden(e.d_ff);
  for (std::size_t r = 0; r < e.d_ff; ++r) {
    double a = 0.0, b = 0.0;
    for (std::size_t c = 0; c < e.d_model; ++c) {
      a += e.w1[r * e.d_model + c] * x[c];
      b += e.w3[r * e.d_model + c] * x[c];
    }
    hidden[r] = silu(a) * b;
  }
  std::vector<double> out(e.d_model, 0.0);
  for (std::size_t r = 0; r < e.d_model; ++r)
    for (std::size_t c = 0; c < e.d_ff; ++c) out[r] += e.w2[r * e.d_ff + c] * hidden[c];
  return out;
}

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

class UndefinedCorrelation : public InputError {
 public:
  UndefinedCorrelation() : InputError("correlation undefined: degenerate variance") {}
};

inline double pearson(std::span<const std::pair<double, double>> pairs) {
  if (pairs.size() < 2) throw UndefinedCorrelation();
  double mx = 0, my = 0;
  for (auto [x, y] : pairs) {
    mx += x;
    my += y;
  }
  mx /= static_cast<double>(pairs.size());
  my /= static_cast<double>(pairs.size());
  double sxy = 0, sxx = 0, syy = 0;
  for (auto [x, y] : pairs) {
    sxy += (x - mx) * (y - my);
    sxx += (x - mx) * (x - mx);
    syy += (y - my) * (y - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw UndefinedCorrelation();
  return sxy / std::sqrt(sxx * syy);
}

/// (gate weight, norm of the weighted expert output) for every selected
/// expert of every input.
inline std::vector<std::pair<double, double>> collect_proxy_pairs(
    std::span<const std::vector<float>> inputs, const GateMatrix& gate,
    std::span<const ToyExpert> experts, std::size_t top_k) {
  std::vector<std::pair<double, double>> pairs;
  for (const auto& x : inputs) {
    const auto g = compute_gate(x, gate, top_k);
    for (const auto& r : g.ranked) {
      auto y = toy_expert_eval(x, experts[r.key.expert]);
      for (double& v : y) v *= r.weight;
      pairs.emplace_back(r.weight, l2_norm(y));
    }
  }
  return pairs;
}

struct ProxySpec {
  std::size_t d_model = 32;
  std::size_t d_ff = 64;
  std::size_t n_experts = 8;
  std::size_t top_k = 2;
  std::size_t n_samples = 1000;
  double gate_scale = 3.0;
  std::uint64_t seed = 7;
};

struct ProxyReport {
  double r = 0.0;
  std::size_t n_samples = 0;
  std::size_t n_pairs = 0;
};

/// Correlation between a selected expert's gate weight and the magnitude of
/// its weighted contribution to the layer output, over random unit inputs.
inline ProxyReport proxy_correlation(const ProxySpec& spec) {
  if (spec.n_samples < 2) throw UndefinedCorrelation();
  ModelSpec m{1, spec.n_experts, spec.top_k, spec.d_model, spec.seed};
  m.validate();
  GaussianSource rng(spec.seed);
  const GateMatrix gate = detail::random_gate(0, m, spec.gate_scale, rng);
  std::vector<ToyExpert> experts;
  for (std::size_t e = 0; e < spec.n_experts; ++e)
    experts.push_back(ToyExpert::random(spec.d_model, spec.d_ff, rng));
  std::vector<std::vector<float>> inputs;
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    const auto u = rng.unit_vector(spec.d_model);
    inputs.emplace_back(u.begin(), u.end());
  }
  const auto pairs = collect_proxy_pairs(inputs, gate, experts, spec.top_k);
  return {pearson(pairs), spec.n_samples, pairs.size()};
}

}  // namespace moesim
