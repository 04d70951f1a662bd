#pragma once

#include <cstddef>
#include <vector>

#include "atp/decoder/config.hpp"
#include "atp/pruning/atp.hpp"
#include "atp/pruning/spatial.hpp"

namespace atp::pruning {

/// Where pruning modules sit and how they behave. Site k prunes the input of
/// decoder layer `sites[k]`, using the attention maps of layer sites[k]-1.
struct AtpPlan {
  std::vector<std::size_t> sites;
  double temperature = 20.0;
  SpatialGrid spatial = SpatialGrid::uniform({8, 8});
  std::size_t head_hidden = 32;
  SelfScoreDirection direction = SelfScoreDirection::queries;

  /// Sites strictly increasing within [1, n_layers), grid matching the model.
  void validate(const decoder::ModelConfig& config) const;
  bool empty() const { return sites.empty(); }
};

/// Fresh threshold heads, one per site.
std::vector<ThresholdHead> init_heads(const AtpPlan& plan, std::size_t vision_tokens, std::mt19937_64& rng);

}  // namespace atp::pruning
