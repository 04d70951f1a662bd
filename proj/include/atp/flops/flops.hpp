#pragma once

#include <cstdint>
#include <vector>

namespace atp::flops {

using Count = std::uint64_t;

/// 4Ld^2 + 2L^2d + 2Ldm, one multiply-accumulate counted as one FLOP.
/// Throws NumericError on 64-bit overflow.
Count layer_flops(Count L, Count d, Count m);

struct PlanEntry {
  std::size_t site = 0;      // layer whose input is pruned
  std::size_t retained = 0;  // vision tokens left after the site
  bool operator==(const PlanEntry&) const = default;
};

struct FlopsSpec {
  std::size_t n_layers = 0;
  std::size_t d = 0;
  std::size_t m = 0;
  std::size_t L0 = 0;  // unpruned vision tokens
  std::vector<PlanEntry> plan;
  bool include_text = false;
  std::size_t text_len = 0;
  std::size_t n_heads = 1;  // only used by the oracle's per-head walk

  /// Throws ConfigError unless sites increase strictly below n_layers and
  /// retained counts never grow along the plan (and never exceed L0).
  void validate() const;
};

struct SegmentCost {
  std::size_t begin = 0, end = 0;  // layers [begin, end)
  std::size_t tokens = 0;          // sequence length inside the run
  Count per_layer = 0;
  Count total = 0;
};

struct Reduction {
  Count baseline = 0;
  Count pruned = 0;
  double fraction = 0.0;  // 1 - pruned / baseline, 0 for an empty model
  std::vector<SegmentCost> segments;
};

Reduction model_reduction(const FlopsSpec& spec);

struct OracleOptions {
  bool count_gate = false;  // the gate projection is outside the closed form
};

/// Walks every layer and counts the GEMMs of the actual block shapes.
Count flops_oracle(const FlopsSpec& spec, const OracleOptions& options = {});

}  // namespace atp::flops
