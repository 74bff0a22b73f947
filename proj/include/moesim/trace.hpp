#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moesim/gating.hpp"

namespace moesim {

/// Knobs of the synthetic gating-input generator.
struct TraceSpec {
  ModelSpec model{};
  std::size_t prompt_len = 16;
  std::size_t decode_len = 64;
  std::size_t n_sequences = 4;
  double layer_similarity = 0.8;  // epsilon: consecutive-layer mixing
  double token_locality = 0.5;    // rho: consecutive-token mixing
  double affinity_skew = 0.0;     // alpha: per-sequence expert preference strength
  double gate_scale = 1.5;        // standard deviation of router logits
  bool shared_gates = false;      // one gate matrix reused by every layer
  std::uint64_t seed = 1;

  void validate() const {
    model.validate();
    if (prompt_len < 1) throw InputError("trace spec: prompt_len must be >= 1");
    if (n_sequences < 1) throw InputError("trace spec: n_sequences must be >= 1");
    auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!unit(layer_similarity)) throw InputError("trace spec: layer_similarity must be in [0,1]");
    if (!unit(token_locality)) throw InputError("trace spec: token_locality must be in [0,1]");
    if (!(affinity_skew >= 0.0)) throw InputError("trace spec: affinity_skew must be >= 0");
    if (!(gate_scale > 0.0)) throw InputError("trace spec: gate_scale must be > 0");
  }
};

/// Per-layer gating inputs of one token, row-major n_layers x d_model.
struct TokenInputs {
  std::vector<float> data;

  std::span<const float> layer(std::size_t l, std::size_t d_model) const {
    return std::span<const float>(data).subspan(l * d_model, d_model);
  }
};

struct SequenceTrace {
  std::uint32_t id = 0;
  std::vector<TokenInputs> prompt;
  std::vector<TokenInputs> decode;
};

struct Trace {
  ModelSpec model{};
  std::vector<GateMatrix> gates;  // one per layer
  std::optional<TraceSpec> generator;
  std::vector<SequenceTrace> sequences;

  std::size_t token_count() const {
    std::size_t n = 0;
    for (const auto& s : sequences) n += s.prompt.size() + s.decode.size();
    return n;
  }

  void validate() const {
    model.validate();
    if (gates.size() != model.n_layers)
      throw InputError("trace: expected " + std::to_string(model.n_layers) + " gate matrices, got " +
                       std::to_string(gates.size()));
    for (std::size_t l = 0; l < gates.size(); ++l) {
      gates[l].validate(model);
      if (gates[l].layer != l) throw InputError("trace: gate matrices out of layer order");
    }
    const std::size_t width = model.n_layers * model.d_model;
    std::size_t row = 0;
    for (const auto& s : sequences) {
      if (s.prompt.empty())
        throw InputError("trace: sequence " + std::to_string(s.id) + " has no prompt tokens");
      for (const auto* part : {&s.prompt, &s.decode})
        for (const auto& t : *part) {
          if (t.data.size() != width)
            throw InputError("trace: token row " + std::to_string(row) + " has " +
                             std::to_string(t.data.size()) + " values, expected " +
                             std::to_string(width));
          ++row;
        }
    }
  }
};

}  // namespace moesim
