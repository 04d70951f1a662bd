#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "atp/decoder/config.hpp"
#include "atp/decoder/params.hpp"
#include "atp/harness/run_config.hpp"
#include "atp/pruning/plan.hpp"

namespace atp::testing {

/// Small model used by the decoder and pruning tests: 4x4 grid, 3 layers.
inline decoder::ModelConfig tiny_config(std::size_t n_layers = 3) {
  decoder::ModelConfig c;
  c.n_layers = n_layers;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.vocab_size = 16;
  c.grid = {4, 4};
  c.max_text_len = 8;
  return c;
}

inline pruning::AtpPlan tiny_plan(std::vector<std::size_t> sites, double temperature = 20.0) {
  pruning::AtpPlan p;
  p.sites = std::move(sites);
  p.temperature = temperature;
  p.spatial = pruning::SpatialGrid::uniform({4, 4}, {2, 4});
  p.head_hidden = 8;
  return p;
}

inline decoder::TokenSequence random_sequence(const decoder::ModelConfig& c, std::mt19937_64& rng,
                                              std::size_t text_len = 4, std::size_t prompt_len = 3) {
  std::uniform_int_distribution<std::int64_t> tok(0, static_cast<std::int64_t>(c.vocab_size) - 1);
  std::vector<std::int64_t> vision(c.vision_tokens()), text(text_len);
  for (auto& v : vision) v = tok(rng);
  for (auto& t : text) t = tok(rng);
  return {c.grid, std::move(vision), std::move(text), prompt_len};
}

/// Seconds-scale training run: tiny decoder, 4x4 grid, two sites.
inline harness::RunConfig tiny_run_config() {
  auto c = harness::RunConfig::desk();
  c.model.n_layers = 3;
  c.model.d_model = 16;
  c.model.n_heads = 2;
  c.model.d_ff = 32;
  c.model.grid = {4, 4};
  c.plan = tiny_plan({1, 2});
  c.budget.lv_norm = 16.0;
  c.budget.n_target = 6.0;
  c.optim.batch_size = 8;
  c.optim.epochs = 1;
  c.data.train_size = 32;
  c.data.eval_size = 12;
  return c;
}

}  // namespace atp::testing
