#pragma once

#include <span>
#include <vector>

#include "atp/decoder/config.hpp"
#include "atp/decoder/params.hpp"
#include "atp/numkit/tensor.hpp"

namespace atp::decoder {

/// Rotary angle table for `positions`: L rows of head_dim/2 pair angles. The
/// first half of the pairs follows the row (or text index), the second half
/// the column (or text index).
std::vector<double> rope_angles(std::span<const Position> positions, std::size_t head_dim, double base);

/// Applies 2D rotary embedding to qk [..., L, head_dim].
num::Tensor rope2d_apply(const num::Tensor& qk, std::span<const Position> positions, double base);

/// Lower-triangular 0/1 weights [L, L] (query row, key column).
num::Tensor causal_weights(std::size_t length);

struct LayerOutput {
  num::Tensor hidden;       // [B, L, D] after the attention residual
  num::Tensor attn_logits;  // [B, H, L, L], before masking
  num::Tensor attn_probs;   // [B, H, L, L], after causal + key masking
  num::Tensor q_rotated;    // [B, H, L, head_dim]
  num::Tensor k_rotated;
};

/// Pre-norm causal self-attention with residual. `key_mask` is [B, L] in
/// [0,1] (undefined means all ones); it weights each key's exponential in
/// the softmax on top of the causal structure.
LayerOutput attention_layer(const num::Tensor& hidden, const num::Tensor& key_mask, const LayerParams& params,
                            const ModelConfig& config, std::span<const Position> positions);

/// Pre-norm gated FFN (silu(x Wg) * x Wu) Wd with residual.
num::Tensor ffn(const num::Tensor& hidden, const LayerParams& params, const ModelConfig& config);

}  // namespace atp::decoder
