#include "atp/decoder/layers.hpp"

#include <cmath>

#include "atp/numkit/ops.hpp"

namespace atp::decoder {

using num::Tensor;

std::vector<double> rope_angles(std::span<const Position> positions, std::size_t head_dim, double base) {
  require(head_dim % 4 == 0, "head_dim must be divisible by 4 for 2D rotary embedding");
  const std::size_t pairs = head_dim / 2;
  const std::size_t half = pairs / 2;
  std::vector<double> freq(half);
  for (std::size_t p = 0; p < half; ++p)
    freq[p] = std::pow(base, -2.0 * static_cast<double>(p) / static_cast<double>(pairs));
  std::vector<double> angles(positions.size() * pairs);
  for (std::size_t t = 0; t < positions.size(); ++t) {
    const auto& pos = positions[t];
    const double first = static_cast<double>(pos.kind == Position::Kind::vision ? pos.row : pos.index);
    const double second = static_cast<double>(pos.kind == Position::Kind::vision ? pos.col : pos.index);
    for (std::size_t p = 0; p < half; ++p) {
      angles[t * pairs + p] = first * freq[p];
      angles[t * pairs + half + p] = second * freq[p];
    }
  }
  return angles;
}

Tensor rope2d_apply(const Tensor& qk, std::span<const Position> positions, double base) {
  require(qk.rank() >= 2, "rope2d_apply needs [..., L, head_dim]");
  require(qk.dim(-2) == positions.size(), "rope2d_apply: one position record per token is required");
  return num::rotate_pairs(qk, rope_angles(positions, qk.dim(-1), base));
}

Tensor causal_weights(std::size_t length) {
  std::vector<double> w(length * length, 0.0);
  for (std::size_t q = 0; q < length; ++q)
    for (std::size_t k = 0; k <= q; ++k) w[q * length + k] = 1.0;
  return Tensor::from({length, length}, std::move(w));
}

LayerOutput attention_layer(const Tensor& hidden, const Tensor& key_mask, const LayerParams& params,
                            const ModelConfig& config, std::span<const Position> positions) {
  require(hidden.rank() == 3 && hidden.dim(2) == config.d_model, "attention_layer expects hidden [B, L, D]");
  const std::size_t batch = hidden.dim(0), length = hidden.dim(1);
  const std::size_t heads = config.n_heads, hd = config.head_dim();
  require(positions.size() == length, "attention_layer: one position record per token is required");

  const auto x = num::rms_norm(hidden, params.attn_norm, config.norm_eps);
  auto split_heads = [&](const Tensor& t) {
    return num::permute(num::reshape(t, {batch, length, heads, hd}), {0, 2, 1, 3});
  };
  const auto angles = rope_angles(positions, hd, config.rope_base);
  LayerOutput out;
  out.q_rotated = num::rotate_pairs(split_heads(num::matmul(x, params.wq)), angles);
  out.k_rotated = num::rotate_pairs(split_heads(num::matmul(x, params.wk)), angles);
  const auto v = split_heads(num::matmul(x, params.wv));

  out.attn_logits = num::scale(num::matmul(out.q_rotated, num::transpose(out.k_rotated)),
                               1.0 / std::sqrt(static_cast<double>(hd)));
  // A query always keeps its own key, so no row can lose every key.
  Tensor weights = num::reshape(causal_weights(length), {1, 1, length, length});
  if (key_mask.defined()) {
    require(key_mask.shape() == num::Shape{batch, length}, "key_mask must be [B, L]");
    const auto strict = num::sub(weights, num::reshape(Tensor::identity(length), {1, 1, length, length}));
    weights = num::add(num::mul(strict, num::reshape(key_mask, {batch, 1, 1, length})),
                       num::reshape(Tensor::identity(length), {1, 1, length, length}));
  }
  out.attn_probs = num::masked_softmax(out.attn_logits, weights);
  const auto mixed = num::reshape(num::permute(num::matmul(out.attn_probs, v), {0, 2, 1, 3}),
                                  {batch, length, config.d_model});
  out.hidden = num::add(hidden, num::matmul(mixed, params.wo));
  return out;
}

Tensor ffn(const Tensor& hidden, const LayerParams& params, const ModelConfig& config) {
  const auto x = num::rms_norm(hidden, params.ffn_norm, config.norm_eps);
  const auto gated = num::mul(num::silu(num::matmul(x, params.w_gate)), num::matmul(x, params.w_up));
  return num::add(hidden, num::matmul(gated, params.w_down));
}

}  // namespace atp::decoder
