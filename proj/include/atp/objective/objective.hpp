#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "atp/decoder/config.hpp"
#include "atp/numkit/tensor.hpp"
#include "atp/pruning/atp.hpp"

namespace atp::objective {

using num::Tensor;

struct BudgetConfig {
  double lambda_atp = 0.05;
  double lambda_target = 0.2;
  double n_target = 16.0;
  double lv_norm = 64.0;
  /// Penalise the cumulative mask at each site (default) or the site-local one.
  bool cumulative_penalty = true;

  /// Throws ConfigError unless the lambdas are non-negative and
  /// 0 < n_target <= vision_tokens.
  void validate(std::size_t vision_tokens) const;
  bool operator==(const BudgetConfig&) const = default;
};

/// Depth-weighted token penalty: per instance sum_k i_k * sum(mask_k) / lv_norm,
/// averaged over the batch. Scalar.
Tensor atp_penalty(std::span<const pruning::PruneState> states, double lv_norm, bool cumulative = true);

/// Per-instance average vision-token count over all layers, [B].
Tensor average_token_count(std::span<const pruning::PruneState> states, std::size_t n_layers,
                           std::size_t vision_tokens, std::size_t batch);

/// Same arithmetic on plain counts.
double average_token_count(std::span<const std::size_t> sites, std::span<const double> retained,
                           std::size_t n_layers, double vision_tokens);

/// |mean(n_bar) - n_target|. Scalar.
Tensor target_loss(const Tensor& n_bar, double n_target);

/// Next-token targets for the text positions of `seq`: position t predicts
/// text token t+1 when that token is part of the answer, else -1.
std::vector<std::int64_t> answer_targets(const decoder::TokenSequence& seq);

/// Mean cross-entropy over supervised positions. `logits` is [..., V] and
/// `targets` has one entry per row (-1 = unsupervised).
Tensor ntp_loss(const Tensor& logits, std::span<const std::int64_t> targets);

Tensor total_loss(const Tensor& ntp, const Tensor& atp, const Tensor& target, const BudgetConfig& cfg);

}  // namespace atp::objective
