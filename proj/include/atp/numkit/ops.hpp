#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "atp/numkit/tensor.hpp"

namespace atp::num {

// Broadcasting follows the usual trailing-aligned rule: extents must match or
// one of them must be 1 (missing leading axes count as 1).
Shape broadcast_shapes(const Shape& a, const Shape& b);

// --- linear algebra -------------------------------------------------------

/// Batched matrix product over the last two axes; leading axes broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& order);
Tensor reshape(const Tensor& a, Shape shape);

// --- pointwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
/// Elementwise max; the gradient goes to `a` on ties.
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
/// Subgradient 0 at the kink.
Tensor abs(const Tensor& a);

enum class ElementwiseOp { add, sub, mul, max, sigmoid, silu, scale };

/// Dispatch form of the pointwise kernels. Unary ops read `inputs[0]`;
/// `factor` is only used by `scale`.
Tensor elementwise(ElementwiseOp op, std::span<const Tensor> inputs, double factor = 1.0);

// --- reductions -----------------------------------------------------------

Tensor sum(const Tensor& a, int axis, bool keepdim = false);
Tensor mean(const Tensor& a, int axis, bool keepdim = false);
/// Reduces everything to shape [1].
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

enum class ReduceOp { sum, mean };
Tensor reduce(ReduceOp op, const Tensor& a, int axis, bool keepdim = false);

// --- indexing -------------------------------------------------------------

Tensor index_select(const Tensor& a, int axis, std::span<const std::size_t> indices);
Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end);
/// Inverse of index_select: places slice i of `a` at position indices[i] of
/// an axis of extent `size`, zeros elsewhere.
Tensor scatter(const Tensor& a, int axis, std::span<const std::size_t> indices, std::size_t size);
Tensor concat(std::span<const Tensor> parts, int axis);

// --- fused kernels --------------------------------------------------------

/// Softmax along the last axis where each exponential is weighted before
/// normalisation:
///   y_j = w_j exp(x_j - m) / sum_k w_k exp(x_k - m)
/// `weights` broadcasts to `logits`, entries in [0,1]. m is the row max over
/// positively weighted entries. Throws DegenerateRow if a row has no positive
/// weight. Differentiable in both arguments.
Tensor masked_softmax(const Tensor& logits, const Tensor& weights);
Tensor softmax(const Tensor& logits);

/// x / sqrt(mean(x^2) + eps) * weight over the last axis.
Tensor rms_norm(const Tensor& x, const Tensor& weight, double eps = 1e-6);

/// Rotates adjacent pairs (2p, 2p+1) of the last axis. `x` is [..., L, D],
/// `angles` holds L * D/2 radians, shared across leading axes.
Tensor rotate_pairs(const Tensor& x, std::span<const double> angles);

/// Mean token cross-entropy of logits [N, V] against `targets`; entries < 0
/// are unsupervised. Throws if nothing is supervised.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets);

/// Row-wise min-max rescaling over the last axis, restricted to positions
/// where `support` is nonzero (same element count as `x`). Support entries map
/// to [0,1] (0.5 for a constant row); everything else becomes 0.
Tensor minmax_normalize(const Tensor& x, std::span<const std::uint8_t> support);

}  // namespace atp::num
