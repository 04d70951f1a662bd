#include "atp/decoder/forward.hpp"

#include "atp/numkit/ops.hpp"

namespace atp::decoder {

using num::Tensor;

Tensor ForwardResult::text_logits() const {
  return num::slice(logits, 1, layout.text_begin(), layout.length());
}

ForwardResult decoder_forward(const ModelConfig& config, const DecoderParams& params,
                              std::span<const TokenSequence> batch, const pruning::AtpPlan& plan,
                              const pruning::PruningPolicy& policy, const ForwardOptions& options) {
  config.validate();
  plan.validate(config);
  require(!batch.empty(), "decoder_forward needs at least one sequence");
  require(params.layers.size() == config.n_layers, "parameter set does not match the layer count");
  const bool infer = options.mode == Mode::infer;
  if (infer) require(batch.size() == 1, "infer mode runs one instance at a time");

  const std::size_t B = batch.size();
  const auto& first = batch.front();
  std::vector<std::size_t> ids;
  for (const auto& seq : batch) {
    require(seq.grid() == config.grid, "sequence grid does not match the model");
    require(seq.text_len() == first.text_len() && seq.prompt_len() == first.prompt_len(),
            "a batch must share one token layout");
    require(seq.text_len() <= config.max_text_len, "text longer than max_text_len");
    for (auto id : seq.ids()) {
      require(id >= 0 && static_cast<std::size_t>(id) < config.vocab_size, "token id outside the vocabulary");
      ids.push_back(static_cast<std::size_t>(id));
    }
  }

  ForwardResult result;
  Layout layout = Layout::of(first);
  const std::size_t full_vision = layout.original_vision;
  const auto s_spatial = pruning::spatial_score(plan.spatial);
  const pruning::SiteOptions site_options{options.mode, plan.temperature, plan.direction};

  Tensor hidden =
      num::reshape(num::index_select(params.embedding, 0, ids), {B, layout.length(), config.d_model});
  Tensor key_mask;
  LayerOutput previous_layer;
  result.token_trace.assign(B, std::vector<double>(config.n_layers, static_cast<double>(full_vision)));
  std::size_t next_site = 0;

  for (std::size_t layer = 0; layer < config.n_layers; ++layer) {
    if (next_site < plan.sites.size() && plan.sites[next_site] == layer) {
      const pruning::PruneState* prev = result.sites.empty() ? nullptr : &result.sites.back();
      auto state = pruning::evaluate_site(next_site, layer, previous_layer, layout, prev, policy, s_spatial,
                                          site_options);
      if (infer) {
        const auto keep = layout.keep_positions(state.retained_indices[0]);
        hidden = num::index_select(hidden, 1, keep);
        layout = layout.retain(state.retained_indices[0]);
      } else {
        const std::vector<Tensor> parts{state.cumulative_mask, Tensor::ones({B, layout.text_len})};
        key_mask = num::concat(parts, 1);
      }
      result.sites.push_back(std::move(state));
      ++next_site;
    }
    if (!result.sites.empty()) {
      const auto& cum = result.sites.back().cumulative_mask;
      for (std::size_t b = 0; b < B; ++b) {
        double count = 0.0;
        for (std::size_t n = 0; n < full_vision; ++n) count += cum.data()[b * full_vision + n];
        result.token_trace[b][layer] = count;
      }
    }

    auto out = attention_layer(hidden, key_mask, params.layers[layer], config, layout.positions);
    hidden = ffn(out.hidden, params.layers[layer], config);
    out.hidden = hidden;
    if (options.capture_layers) result.layers.push_back(out);
    previous_layer = std::move(out);
  }

  result.logits = num::matmul(num::rms_norm(hidden, params.final_norm, config.norm_eps), params.lm_head);
  result.layout = std::move(layout);
  return result;
}

}  // namespace atp::decoder
