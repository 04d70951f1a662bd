#include "atp/objective/objective.hpp"

#include "atp/numkit/ops.hpp"
#include "atp/segments.hpp"

namespace atp::objective {

void BudgetConfig::validate(std::size_t vision_tokens) const {
  if (!(lambda_atp >= 0.0) || !(lambda_target >= 0.0)) throw ConfigError("budget lambdas must be non-negative");
  if (!(n_target > 0.0) || n_target > static_cast<double>(vision_tokens))
    throw ConfigError("n_target must lie in (0, " + std::to_string(vision_tokens) + "]");
  if (!(lv_norm > 0.0)) throw ConfigError("lv_norm must be positive");
}

namespace {

const Tensor& site_mask(const pruning::PruneState& s, bool cumulative) {
  return cumulative ? s.cumulative_mask : s.mask_combined;
}

}  // namespace

Tensor atp_penalty(std::span<const pruning::PruneState> states, double lv_norm, bool cumulative) {
  require(lv_norm > 0.0, "lv_norm must be positive");
  if (states.empty()) return Tensor::scalar(0.0);
  Tensor per_instance;
  for (const auto& s : states) {
    const auto term = num::scale(num::sum(site_mask(s, cumulative), 1), static_cast<double>(s.site_layer) / lv_norm);
    per_instance = per_instance.defined() ? num::add(per_instance, term) : term;
  }
  return num::mean_all(per_instance);
}

Tensor average_token_count(std::span<const pruning::PruneState> states, std::size_t n_layers,
                           std::size_t vision_tokens, std::size_t batch) {
  std::vector<std::size_t> sites;
  for (const auto& s : states) sites.push_back(s.site_layer);
  Tensor total = Tensor::zeros({batch});
  for (const auto& seg : layer_segments(n_layers, sites)) {
    const double len = static_cast<double>(seg.length());
    if (seg.source < 0) {
      total = num::add_scalar(total, len * static_cast<double>(vision_tokens));
    } else {
      const auto& mask = states[static_cast<std::size_t>(seg.source)].cumulative_mask;
      require(mask.dim(0) == batch, "mask batch size mismatch");
      total = num::add(total, num::scale(num::sum(mask, 1), len));
    }
  }
  return num::scale(total, 1.0 / static_cast<double>(n_layers));
}

double average_token_count(std::span<const std::size_t> sites, std::span<const double> retained, std::size_t n_layers,
                           double vision_tokens) {
  require(n_layers > 0, "average_token_count needs at least one layer");
  const auto counts = per_layer_counts(n_layers, sites, retained, vision_tokens);
  double total = 0.0;
  for (double c : counts) total += c;
  return total / static_cast<double>(n_layers);
}

Tensor target_loss(const Tensor& n_bar, double n_target) {
  return num::abs(num::add_scalar(num::mean_all(n_bar), -n_target));
}

std::vector<std::int64_t> answer_targets(const decoder::TokenSequence& seq) {
  const auto& text = seq.text_ids();
  std::vector<std::int64_t> targets(text.size(), -1);
  for (std::size_t t = 0; t + 1 < text.size(); ++t)
    if (t + 1 >= seq.prompt_len()) targets[t] = text[t + 1];
  return targets;
}

Tensor ntp_loss(const Tensor& logits, std::span<const std::int64_t> targets) {
  require(logits.rank() >= 2, "ntp_loss expects [..., V] logits");
  const std::size_t vocab = logits.dim(-1);
  const std::size_t rows = logits.numel() / vocab;
  require(targets.size() == rows, "ntp_loss needs one target per logit row");
  return num::cross_entropy(num::reshape(logits, {rows, vocab}), targets);
}

Tensor total_loss(const Tensor& ntp, const Tensor& atp, const Tensor& target, const BudgetConfig& cfg) {
  return num::add(ntp, num::add(num::scale(atp, cfg.lambda_atp), num::scale(target, cfg.lambda_target)));
}

}  // namespace atp::objective
