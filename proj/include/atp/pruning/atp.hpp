#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <variant>
#include <vector>

#include "atp/decoder/layers.hpp"
#include "atp/decoder/layout.hpp"
#include "atp/decoder/params.hpp"
#include "atp/numkit/tensor.hpp"
#include "atp/pruning/spatial.hpp"

namespace atp::pruning {

using num::Tensor;

/// Which side of the vision-vision logit block the self score averages over.
/// `queries`: S_self[n] is the mean logit that vision queries assign to key n.
enum class SelfScoreDirection { queries, keys };

/// Scores of one site, each [B, L_v] at ORIGINAL vision length; positions that
/// were already pruned hold 0.
struct ImportanceScores {
  Tensor s_self;
  Tensor s_cross;
  Tensor s_self_norm;
  Tensor s_cross_norm;
  Tensor s_redundant;
  std::vector<double> s_spatial;  // [L_v], shared by every instance
};

/// Threshold predictor of one site: a shared linear map over the concatenated
/// normalised scores, then one sigmoid head per threshold.
struct ThresholdHead {
  Tensor w_z, b_z;  // [2 L_v, H], [H]
  Tensor w_r, b_r;  // [H, 1], [1]
  Tensor w_s, b_s;

  static ThresholdHead init(std::size_t vision_tokens, std::size_t hidden, std::mt19937_64& rng,
                            double initial_bias = -2.0);
  void append_named(const std::string& prefix, decoder::NamedTensors& out) const;
};

struct Thresholds {
  Tensor theta_r;  // [B, 1]
  Tensor theta_s;
};

struct SoftMasks {
  Tensor mask_r, mask_s, combined, cumulative;  // [B, L_v]
};

struct PruneState {
  std::size_t site_layer = 0;
  ImportanceScores scores;
  Tensor theta_r, theta_s;  // undefined for fixed-ratio / fixed-mask policies
  Tensor mask_r, mask_s, mask_combined, cumulative_mask;
  /// Per instance, the original vision indices that survive this site. In
  /// infer mode these are the tokens physically kept; in train mode they are
  /// the hard decisions implied by the soft masks (used as score support).
  std::vector<std::vector<std::size_t>> retained_indices;
};

// --- scoring --------------------------------------------------------------

/// Mean over heads, then over the vision-vision logit block. `query_weights`
/// [B, L_v'] weights each averaged vision token (undefined means uniform).
/// Returns [B, L_v'] for the vision tokens currently present.
Tensor self_score(const Tensor& attn_logits, const decoder::Layout& layout, const Tensor& query_weights = {},
                  SelfScoreDirection direction = SelfScoreDirection::queries);

/// Mean over heads, then the mean probability that prompt text queries put on
/// each present vision key. Returns [B, L_v'].
Tensor cross_score(const Tensor& attn_probs, const decoder::Layout& layout);

/// Min-max normalises both vectors over `support` and averages them. Entries
/// outside the support are 0.
Tensor combine_redundant(const Tensor& s_self, const Tensor& s_cross, std::span<const std::uint8_t> support);

// --- thresholds and masks -------------------------------------------------

Thresholds predict_thresholds(const ThresholdHead& head, const Tensor& s_self_norm, const Tensor& s_cross_norm);

/// mask_r = sigmoid((s_red - theta_r) T), mask_s = sigmoid((s_spatial - theta_s) T),
/// combined = max(mask_r, mask_s), cumulative = prev * combined.
SoftMasks soft_masks(const Tensor& s_redundant, std::span<const double> s_spatial, const Tensor& theta_r,
                     const Tensor& theta_s, double temperature, const Tensor& prev_cumulative = {});

/// Surviving tokens with s_red[n] >= theta_r or s_spatial[n] >= theta_s,
/// sorted, without the floor guard.
std::vector<std::size_t> threshold_rule(std::span<const double> s_redundant, std::span<const double> s_spatial,
                                        double theta_r, double theta_s, std::span<const std::size_t> surviving);

/// Keeps surviving token n iff s_red[n] >= theta_r or s_spatial[n] >= theta_s.
/// If nothing would survive, keeps the surviving token with the highest s_red
/// (lowest index on ties). Returns sorted original indices.
std::vector<std::size_t> hard_prune(std::span<const double> s_redundant, std::span<const double> s_spatial,
                                    double theta_r, double theta_s, std::span<const std::size_t> surviving);

/// Top-`keep` surviving tokens by s_red, ties to the lower index. Returns
/// sorted indices; `keep` is clamped to the surviving count.
std::vector<std::size_t> top_k_retain(std::span<const double> s_redundant, std::span<const std::size_t> surviving,
                                      std::size_t keep);

// --- per-site policies ----------------------------------------------------

/// Learned thresholds from one head per site.
struct AdaptivePolicy {
  const std::vector<ThresholdHead>* heads = nullptr;
};
/// Constant thresholds at every site (diagnostics and tests).
struct FixedThresholdPolicy {
  double theta_r = 0.0;
  double theta_s = 0.0;
};
/// Pre-defined keep counts per site, selected by s_redundant.
struct FixedRatioPolicy {
  std::vector<std::size_t> keep;
};
/// Explicit binary keep masks: keep[site][instance][original vision index].
struct FixedMaskPolicy {
  std::vector<std::vector<std::vector<std::uint8_t>>> keep;
};

using PruningPolicy = std::variant<AdaptivePolicy, FixedThresholdPolicy, FixedRatioPolicy, FixedMaskPolicy>;

struct SiteOptions {
  decoder::Mode mode = decoder::Mode::train;
  double temperature = 20.0;
  SelfScoreDirection direction = SelfScoreDirection::queries;
};

/// Runs the pruning module at `site_index` (layer `site_layer`) on the maps
/// of the layer just before it. `previous` is the state of the prior site or
/// null at the first site.
PruneState evaluate_site(std::size_t site_index, std::size_t site_layer, const decoder::LayerOutput& maps,
                         const decoder::Layout& layout, const PruneState* previous, const PruningPolicy& policy,
                         std::span<const double> s_spatial, const SiteOptions& options);

}  // namespace atp::pruning
