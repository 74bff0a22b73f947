#pragma once

#include <compare>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace moesim {

/// Rejected input: malformed files, dimension mismatches, bad config values.
/// The CLI maps this to exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A pool is full and every member is ineligible for eviction.
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelSpec {
  std::size_t n_layers = 32;
  std::size_t n_experts = 8;
  std::size_t top_k = 2;
  std::size_t d_model = 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_layers < 1) throw InputError("model: n_layers must be >= 1");
    if (d_model < 1) throw InputError("model: d_model must be >= 1");
    if (top_k < 1 || top_k > n_experts)
      throw InputError("model: top_k must lie in [1, n_experts]");
  }

  std::size_t expert_slots() const { return n_layers * n_experts; }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

enum class Precision : std::uint8_t { High, Low };

inline const char* to_string(Precision p) { return p == Precision::High ? "high" : "low"; }

/// Bit widths of the two precision versions of every expert (fp16/int4 by default).
struct BitWidths {
  unsigned high = 16;
  unsigned low = 4;

  void validate() const {
    if (low == 0 || high == 0 || low >= high)
      throw InputError("bit widths: require 0 < low < high");
  }

  unsigned of(Precision p) const { return p == Precision::High ? high : low; }
  double ratio() const { return static_cast<double>(low) / static_cast<double>(high); }
};

struct ExpertKey {
  std::uint32_t layer = 0;
  std::uint32_t expert = 0;

  auto operator<=>(const ExpertKey&) const = default;
};

inline std::size_t flat_index(ExpertKey k, std::size_t n_experts) {
  return static_cast<std::size_t>(k.layer) * n_experts + k.expert;
}

/// Prices transfers over the next-level-memory link and per-layer compute.
/// Times are abstract milliseconds.
struct CostModel {
  double bandwidth_bytes_per_ms = 32e6;  // 32 GB/s
  double expert_bytes_high = 0.328e9;
  double expert_bytes_low = 0.082e9;
  double attn_compute_ms = 2.0;
  double expert_compute_ms = 0.5;
  double gate_compute_ms = 0.05;
  BitWidths bits{};
  // A started transfer always runs to completion.
  static constexpr bool preemptible_transfers = false;

  /// Builds a cost model whose low-precision size follows from the bit widths.
  static CostModel from_high_bytes(double bytes_high, double bandwidth, BitWidths bits = {}) {
    CostModel c;
    c.bits = bits;
    c.bandwidth_bytes_per_ms = bandwidth;
    c.expert_bytes_high = bytes_high;
    c.expert_bytes_low = bytes_high * bits.ratio();
    return c;
  }

  void validate() const {
    bits.validate();
    if (!(bandwidth_bytes_per_ms > 0)) throw InputError("cost: bandwidth must be positive");
    if (!(expert_bytes_high > 0) || !(expert_bytes_low > 0))
      throw InputError("cost: expert byte sizes must be positive");
    if (attn_compute_ms < 0 || expert_compute_ms < 0 || gate_compute_ms < 0)
      throw InputError("cost: compute times must be nonnegative");
    if (std::abs(expert_bytes_low / expert_bytes_high - bits.ratio()) > 1e-9)
      throw InputError("cost: expert_bytes_low / expert_bytes_high must equal low/high bit widths");
  }

  double expert_bytes(Precision p) const {
    return p == Precision::High ? expert_bytes_high : expert_bytes_low;
  }
};

inline double load_time(Precision p, const CostModel& cost) {
  return cost.expert_bytes(p) / cost.bandwidth_bytes_per_ms;
}

/// Miss penalty normalized to a high-precision miss.
inline double miss_penalty(Precision p, BitWidths bits) {
  return p == Precision::High ? 1.0 : bits.ratio();
}

}  // namespace moesim
