#include "atp/pruning/atp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "atp/log.hpp"
#include "atp/numkit/ops.hpp"

namespace atp::pruning {

namespace {

using decoder::Layout;
using decoder::Mode;

Tensor tracked(num::Shape shape, std::mt19937_64& rng, double stddev) {
  auto t = Tensor::randn(std::move(shape), rng, stddev);
  t.set_requires_grad(true);
  return t;
}

Tensor tracked_full(num::Shape shape, double value) {
  auto t = Tensor::full(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

Tensor binary_mask(const std::vector<std::vector<std::size_t>>& retained, std::size_t width) {
  std::vector<double> values(retained.size() * width, 0.0);
  for (std::size_t b = 0; b < retained.size(); ++b)
    for (auto n : retained[b]) values[b * width + n] = 1.0;
  return Tensor::from({retained.size(), width}, std::move(values));
}

std::vector<double> row(const Tensor& t, std::size_t b) {
  const std::size_t width = t.dim(1);
  auto d = t.data();
  return {d.begin() + static_cast<std::ptrdiff_t>(b * width), d.begin() + static_cast<std::ptrdiff_t>((b + 1) * width)};
}

std::size_t best_redundant(std::span<const double> s_redundant, std::span<const std::size_t> surviving) {
  std::size_t best = surviving.front();
  for (auto n : surviving)
    if (s_redundant[n] > s_redundant[best]) best = n;
  return best;
}

}  // namespace

ThresholdHead ThresholdHead::init(std::size_t vision_tokens, std::size_t hidden, std::mt19937_64& rng,
                                  double initial_bias) {
  ThresholdHead h;
  const double fan_in = 1.0 / std::sqrt(static_cast<double>(2 * vision_tokens));
  const double head_in = 1.0 / std::sqrt(static_cast<double>(hidden));
  h.w_z = tracked({2 * vision_tokens, hidden}, rng, fan_in);
  h.b_z = tracked_full({hidden}, 0.0);
  h.w_r = tracked({hidden, 1}, rng, head_in);
  h.b_r = tracked_full({1}, initial_bias);
  h.w_s = tracked({hidden, 1}, rng, head_in);
  h.b_s = tracked_full({1}, initial_bias);
  return h;
}

void ThresholdHead::append_named(const std::string& prefix, decoder::NamedTensors& out) const {
  out.emplace_back(prefix + "w_z", w_z);
  out.emplace_back(prefix + "b_z", b_z);
  out.emplace_back(prefix + "w_r", w_r);
  out.emplace_back(prefix + "b_r", b_r);
  out.emplace_back(prefix + "w_s", w_s);
  out.emplace_back(prefix + "b_s", b_s);
}

Tensor self_score(const Tensor& attn_logits, const Layout& layout, const Tensor& query_weights,
                  SelfScoreDirection direction) {
  require(attn_logits.rank() == 4, "self_score expects logits [B, H, L, L]");
  const std::size_t batch = attn_logits.dim(0);
  const std::size_t vis = layout.vision_len();
  if (vis == 0) throw ContractViolation("self_score: no surviving vision tokens");
  const auto heads_mean = num::mean(attn_logits, 1);
  const auto block = num::slice(num::slice(heads_mean, 1, 0, vis), 2, 0, vis);  // [B, query, key]
  const bool over_queries = direction == SelfScoreDirection::queries;
  if (!query_weights.defined()) return num::mean(block, over_queries ? 1 : 2);

  require(query_weights.shape() == num::Shape{batch, vis}, "self_score weights must be [B, L_v']");
  for (std::size_t b = 0; b < batch; ++b) {
    double total = 0.0;
    for (std::size_t i = 0; i < vis; ++i) total += query_weights.data()[b * vis + i];
    if (!(total > 0.0)) throw ContractViolation("self_score: no surviving vision tokens");
  }
  const auto weighted = over_queries ? num::matmul(num::reshape(query_weights, {batch, 1, vis}), block)
                                     : num::matmul(block, num::reshape(query_weights, {batch, vis, 1}));
  return num::div(num::reshape(weighted, {batch, vis}), num::sum(query_weights, 1, true));
}

Tensor cross_score(const Tensor& attn_probs, const Layout& layout) {
  require(attn_probs.rank() == 4, "cross_score expects probabilities [B, H, L, L]");
  if (layout.prompt_len == 0) throw ContractViolation("cross_score: no text tokens to attend from");
  const std::size_t vis = layout.vision_len();
  if (vis == 0) throw ContractViolation("cross_score: no surviving vision tokens");
  const auto heads_mean = num::mean(attn_probs, 1);
  const auto block = num::slice(num::slice(heads_mean, 1, vis, vis + layout.prompt_len), 2, 0, vis);
  return num::mean(block, 1);
}

Tensor combine_redundant(const Tensor& s_self, const Tensor& s_cross, std::span<const std::uint8_t> support) {
  require(s_self.shape() == s_cross.shape(), "combine_redundant needs equal-length score vectors");
  return num::scale(num::add(num::minmax_normalize(s_self, support), num::minmax_normalize(s_cross, support)), 0.5);
}

Thresholds predict_thresholds(const ThresholdHead& head, const Tensor& s_self_norm, const Tensor& s_cross_norm) {
  require(s_self_norm.rank() == 2 && s_self_norm.shape() == s_cross_norm.shape(),
          "threshold head expects two [B, L_v] score matrices");
  require(2 * s_self_norm.dim(1) == head.w_z.dim(0), "threshold head width does not match the vision length");
  const std::vector<Tensor> parts{s_self_norm, s_cross_norm};
  const auto z = num::add(num::matmul(num::concat(parts, 1), head.w_z), head.b_z);
  return {num::sigmoid(num::add(num::matmul(z, head.w_r), head.b_r)),
          num::sigmoid(num::add(num::matmul(z, head.w_s), head.b_s))};
}

SoftMasks soft_masks(const Tensor& s_redundant, std::span<const double> s_spatial, const Tensor& theta_r,
                     const Tensor& theta_s, double temperature, const Tensor& prev_cumulative) {
  require(temperature > 0.0, "soft mask temperature must be positive");
  require(s_redundant.rank() == 2 && s_redundant.dim(1) == s_spatial.size(),
          "soft_masks expects s_redundant [B, L_v] matching the spatial score length");
  const auto spatial = Tensor::from({1, s_spatial.size()}, {s_spatial.begin(), s_spatial.end()});
  SoftMasks m;
  m.mask_r = num::sigmoid(num::scale(num::sub(s_redundant, theta_r), temperature));
  m.mask_s = num::sigmoid(num::scale(num::sub(spatial, theta_s), temperature));
  if (m.mask_s.dim(0) != m.mask_r.dim(0))
    m.mask_s = num::mul(m.mask_s, Tensor::ones(m.mask_r.shape()));
  m.combined = num::maximum(m.mask_r, m.mask_s);
  m.cumulative = prev_cumulative.defined() ? num::mul(prev_cumulative, m.combined) : m.combined;
  return m;
}

std::vector<std::size_t> threshold_rule(std::span<const double> s_redundant, std::span<const double> s_spatial,
                                        double theta_r, double theta_s, std::span<const std::size_t> surviving) {
  require(s_redundant.size() == s_spatial.size(), "hard_prune score lengths differ");
  std::vector<std::size_t> kept;
  for (auto n : surviving) {
    require(n < s_redundant.size(), "hard_prune surviving index out of range");
    if (s_redundant[n] >= theta_r || s_spatial[n] >= theta_s) kept.push_back(n);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

std::vector<std::size_t> hard_prune(std::span<const double> s_redundant, std::span<const double> s_spatial,
                                    double theta_r, double theta_s, std::span<const std::size_t> surviving) {
  auto kept = threshold_rule(s_redundant, s_spatial, theta_r, theta_s, surviving);
  if (kept.empty() && !surviving.empty()) kept.push_back(best_redundant(s_redundant, surviving));
  return kept;
}

std::vector<std::size_t> top_k_retain(std::span<const double> s_redundant, std::span<const std::size_t> surviving,
                                      std::size_t keep) {
  std::vector<std::size_t> order(surviving.begin(), surviving.end());
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (s_redundant[a] != s_redundant[b]) return s_redundant[a] > s_redundant[b];
    return a < b;
  });
  order.resize(std::min(keep, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

PruneState evaluate_site(std::size_t site_index, std::size_t site_layer, const decoder::LayerOutput& maps,
                         const Layout& layout, const PruneState* previous, const PruningPolicy& policy,
                         std::span<const double> s_spatial, const SiteOptions& options) {
  const bool infer = options.mode == Mode::infer;
  const std::size_t batch = maps.attn_logits.dim(0);
  const std::size_t full = layout.original_vision;
  const std::size_t present = layout.vision_len();
  require(s_spatial.size() == full, "spatial score length must equal the original vision length");
  if (infer)
    require(batch == 1, "infer mode prunes one instance at a time");
  else
    require(present == full, "train mode never removes tokens");

  // Survivors before this site, as original indices.
  std::vector<std::vector<std::size_t>> survivors(batch);
  for (std::size_t b = 0; b < batch; ++b)
    survivors[b] = previous ? previous->retained_indices.at(b) : layout.vision_slots;

  std::vector<std::uint8_t> support(batch * present, 0);
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < present; ++i) {
      while (cursor < survivors[b].size() && survivors[b][cursor] < layout.vision_slots[i]) ++cursor;
      if (cursor < survivors[b].size() && survivors[b][cursor] == layout.vision_slots[i]) support[b * present + i] = 1;
    }
  }
  std::vector<double> support_values(support.begin(), support.end());
  const auto support_mask = Tensor::from({batch, present}, support_values);

  const Tensor query_weights = (!infer && previous) ? previous->cumulative_mask : Tensor{};
  const auto self_now = self_score(maps.attn_logits, layout, query_weights, options.direction);
  const auto cross_now = cross_score(maps.attn_probs, layout);
  const auto to_full = [&](const Tensor& t) {
    return present == full ? t : num::scatter(t, 1, layout.vision_slots, full);
  };

  PruneState state;
  state.site_layer = site_layer;
  auto& sc = state.scores;
  sc.s_self = to_full(num::mul(self_now, support_mask));
  sc.s_cross = to_full(num::mul(cross_now, support_mask));
  sc.s_self_norm = to_full(num::minmax_normalize(self_now, support));
  sc.s_cross_norm = to_full(num::minmax_normalize(cross_now, support));
  sc.s_redundant = num::scale(num::add(sc.s_self_norm, sc.s_cross_norm), 0.5);
  sc.s_spatial.assign(s_spatial.begin(), s_spatial.end());

  const Tensor prev_cumulative = previous ? previous->cumulative_mask : Tensor{};

  auto threshold_path = [&](const Tensor& theta_r, const Tensor& theta_s) {
    state.theta_r = theta_r;
    state.theta_s = theta_s;
    auto masks = soft_masks(sc.s_redundant, s_spatial, theta_r, theta_s, options.temperature, prev_cumulative);
    state.mask_r = masks.mask_r;
    state.mask_s = masks.mask_s;
    state.mask_combined = masks.combined;
    state.cumulative_mask = masks.cumulative;
    for (std::size_t b = 0; b < batch; ++b)
      state.retained_indices.push_back(hard_prune(row(sc.s_redundant, b), s_spatial, theta_r.data()[b],
                                                  theta_s.data()[b], survivors[b]));
  };

  auto selection_path = [&](std::vector<std::vector<std::size_t>> retained) {
    state.retained_indices = std::move(retained);
    state.mask_combined = binary_mask(state.retained_indices, full);
    state.cumulative_mask =
        prev_cumulative.defined() ? num::mul(prev_cumulative, state.mask_combined) : state.mask_combined;
  };

  if (const auto* adaptive = std::get_if<AdaptivePolicy>(&policy)) {
    require(adaptive->heads && site_index < adaptive->heads->size(), "no threshold head for this site");
    const auto th = predict_thresholds((*adaptive->heads)[site_index], sc.s_self_norm, sc.s_cross_norm);
    threshold_path(th.theta_r, th.theta_s);
  } else if (const auto* fixed = std::get_if<FixedThresholdPolicy>(&policy)) {
    threshold_path(Tensor::full({batch, 1}, fixed->theta_r), Tensor::full({batch, 1}, fixed->theta_s));
  } else if (const auto* ratio = std::get_if<FixedRatioPolicy>(&policy)) {
    require(site_index < ratio->keep.size(), "fixed-ratio schedule has no entry for this site");
    const std::size_t keep = ratio->keep[site_index];
    std::vector<std::vector<std::size_t>> retained;
    for (std::size_t b = 0; b < batch; ++b) {
      if (keep > survivors[b].size())
        log_warning("keep count " + std::to_string(keep) + " exceeds the " + std::to_string(survivors[b].size()) +
                    " surviving tokens at layer " + std::to_string(site_layer) + "; clamping");
      retained.push_back(top_k_retain(row(sc.s_redundant, b), survivors[b], std::max<std::size_t>(keep, 1)));
    }
    selection_path(std::move(retained));
  } else {
    const auto& given = std::get<FixedMaskPolicy>(policy);
    require(site_index < given.keep.size() && given.keep[site_index].size() == batch,
            "fixed-mask policy must give one mask per instance per site");
    std::vector<std::vector<std::size_t>> retained;
    for (std::size_t b = 0; b < batch; ++b) {
      const auto& mask = given.keep[site_index][b];
      require(mask.size() == full, "fixed mask length must equal the original vision length");
      std::vector<std::size_t> kept;
      for (auto n : survivors[b])
        if (mask[n]) kept.push_back(n);
      if (kept.empty()) kept.push_back(best_redundant(row(sc.s_redundant, b), survivors[b]));
      retained.push_back(std::move(kept));
    }
    selection_path(std::move(retained));
  }

  if (infer) state.cumulative_mask = binary_mask(state.retained_indices, full);
  return state;
}

}  // namespace atp::pruning
