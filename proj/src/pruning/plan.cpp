#include "atp/pruning/plan.hpp"

#include <string>

namespace atp::pruning {

void AtpPlan::validate(const decoder::ModelConfig& config) const {
  for (std::size_t i = 0; i < sites.size(); ++i) {
    if (sites[i] == 0 || sites[i] >= config.n_layers)
      throw ConfigError("pruning site " + std::to_string(sites[i]) + " must lie in [1, " +
                        std::to_string(config.n_layers) + ")");
    if (i > 0 && sites[i] <= sites[i - 1]) throw ConfigError("pruning sites must be strictly increasing");
  }
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(spatial.grid == config.grid)) throw ConfigError("spatial grid does not match the model's vision grid");
  spatial.validate();
  if (head_hidden == 0) throw ConfigError("threshold head width must be positive");
}

std::vector<ThresholdHead> init_heads(const AtpPlan& plan, std::size_t vision_tokens, std::mt19937_64& rng) {
  std::vector<ThresholdHead> heads;
  for (std::size_t i = 0; i < plan.sites.size(); ++i)
    heads.push_back(ThresholdHead::init(vision_tokens, plan.head_hidden, rng));
  return heads;
}

}  // namespace atp::pruning
