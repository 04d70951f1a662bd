#pragma once

#include <span>
#include <vector>

#include "atp/decoder/config.hpp"
#include "atp/decoder/layers.hpp"
#include "atp/decoder/layout.hpp"
#include "atp/decoder/params.hpp"
#include "atp/pruning/atp.hpp"
#include "atp/pruning/plan.hpp"

namespace atp::decoder {

struct ForwardOptions {
  Mode mode = Mode::train;
  bool capture_layers = false;
};

struct ForwardResult {
  num::Tensor logits;  // [B, L_final, V]
  Layout layout;       // tokens present after the last layer
  std::vector<pruning::PruneState> sites;
  /// Per instance, the (effective) number of vision tokens entering each
  /// layer: mask sums in train mode, physical counts in infer mode.
  std::vector<std::vector<double>> token_trace;
  std::vector<LayerOutput> layers;  // only with capture_layers

  /// Logits at text positions, [B, L_t, V].
  num::Tensor text_logits() const;
};

/// Full decoder pass. In train mode every instance keeps its full length and
/// each site's cumulative mask weights the keys of all later layers; the batch
/// must share one layout. In infer mode (batch of one) pruned vision tokens
/// are removed before the site's layer and never come back.
ForwardResult decoder_forward(const ModelConfig& config, const DecoderParams& params,
                              std::span<const TokenSequence> batch, const pruning::AtpPlan& plan,
                              const pruning::PruningPolicy& policy, const ForwardOptions& options = {});

}  // namespace atp::decoder
