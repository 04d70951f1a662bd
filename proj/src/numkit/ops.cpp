#include "atp/numkit/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace atp::num {

namespace {

using detail::Impl;
using detail::make_result;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  if (axis < 0) axis += r;
  require(axis >= 0 && axis < r, "axis out of range");
  return static_cast<std::size_t>(axis);
}

std::size_t product(const Shape& s, std::size_t from, std::size_t to) {
  std::size_t n = 1;
  for (std::size_t i = from; i < to; ++i) n *= s[i];
  return n;
}

// For every flat index of `out`, the flat index of the broadcast source `in`.
std::vector<std::size_t> broadcast_index(const Shape& out, const Shape& in) {
  const std::size_t rank = out.size();
  const std::size_t offset = rank - in.size();
  std::vector<std::size_t> in_stride(rank, 0);
  std::size_t stride = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    in_stride[i + offset] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  const std::size_t total = numel(out);
  std::vector<std::size_t> map(total);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    map[flat] = src;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++counter[ax];
      src += in_stride[ax];
      if (counter[ax] < out[ax]) break;
      src -= in_stride[ax] * counter[ax];
      counter[ax] = 0;
    }
  }
  return map;
}

void accumulate_into(Impl& target, std::span<const double> g) {
  if (!target.requires_grad) return;
  auto& buf = target.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

// Pointwise binary op with broadcasting. `fa`/`fb` return the local partials.
template <class F, class FA, class FB>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, F f, FA fa, FB fb) {
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  const std::size_t n = numel(out_shape);
  const auto& ad = a.impl().data;
  const auto& bd = b.impl().data;
  std::vector<double> out(n);
  const bool same_a = a.shape() == out_shape;
  const bool same_b = b.shape() == out_shape;
  std::vector<std::size_t> ia, ib;
  if (!same_a) ia = broadcast_index(out_shape, a.shape());
  if (!same_b) ib = broadcast_index(out_shape, b.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double x = ad[same_a ? i : ia[i]];
    const double y = bd[same_b ? i : ib[i]];
    out[i] = f(x, y);
  }
  return make_result(name, out_shape, std::move(out), {a, b},
                     [a, b, same_a, same_b, ia = std::move(ia), ib = std::move(ib), fa, fb](Impl& o) {
                       auto& A = a.impl();
                       auto& B = b.impl();
                       const std::size_t n = o.grad.size();
                       if (A.requires_grad) {
                         auto& g = A.grad_buffer();
                         for (std::size_t i = 0; i < n; ++i) {
                           const std::size_t ai = same_a ? i : ia[i];
                           const std::size_t bi = same_b ? i : ib[i];
                           g[ai] += o.grad[i] * fa(A.data[ai], B.data[bi]);
                         }
                       }
                       if (B.requires_grad) {
                         auto& g = B.grad_buffer();
                         for (std::size_t i = 0; i < n; ++i) {
                           const std::size_t ai = same_a ? i : ia[i];
                           const std::size_t bi = same_b ? i : ib[i];
                           g[bi] += o.grad[i] * fb(A.data[ai], B.data[bi]);
                         }
                       }
                     });
}

// Pointwise unary op; `df(x, y)` is the local derivative given input and output.
template <class F, class DF>
Tensor unary(const char* name, const Tensor& a, F f, DF df) {
  const auto& ad = a.impl().data;
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = f(ad[i]);
  return make_result(name, a.shape(), std::move(out), {a}, [a, df](Impl& o) {
    auto& A = a.impl();
    auto& g = A.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * df(A.data[i], o.data[i]);
  });
}

// exp(-x) may overflow to inf for very negative x, which still yields 0.
double sigmoid_value(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      throw ContractViolation("shapes " + to_string(a) + " and " + to_string(b) + " do not broadcast");
    out[i] = std::max(ea, eb);
  }
  return out;
}

// --- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  require(as.size() >= 2 && bs.size() >= 2, "matmul needs rank >= 2 operands");
  const std::size_t m = as[as.size() - 2], k = as.back();
  const std::size_t k2 = bs[bs.size() - 2], n = bs.back();
  if (k != k2)
    throw ContractViolation("matmul inner extents differ: " + to_string(as) + " x " + to_string(bs));

  const Shape a_batch(as.begin(), as.end() - 2);
  const Shape b_batch(bs.begin(), bs.end() - 2);

  // Shared right operand: fold every leading axis of `a` into its rows.
  if (b_batch.empty()) {
    const std::size_t rows = numel(a_batch) * m;
    std::vector<double> out(rows * n);
    MutMap(out.data(), rows, n).noalias() = ConstMap(a.impl().data.data(), rows, k) * ConstMap(b.impl().data.data(), k, n);
    Shape out_shape = a_batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    return make_result("matmul", out_shape, std::move(out), {a, b}, [a, b, rows, k, n](Impl& o) {
      auto& A = a.impl();
      auto& B = b.impl();
      ConstMap G(o.grad.data(), rows, n);
      if (A.requires_grad)
        MutMap(A.grad_buffer().data(), rows, k).noalias() += G * ConstMap(B.data.data(), k, n).transpose();
      if (B.requires_grad)
        MutMap(B.grad_buffer().data(), k, n).noalias() += ConstMap(A.data.data(), rows, k).transpose() * G;
    });
  }

  Shape batch = broadcast_shapes(a_batch.empty() ? Shape{1} : a_batch, b_batch);
  const std::size_t nb = numel(batch);
  std::vector<std::size_t> ia = a_batch.empty() ? std::vector<std::size_t>(nb, 0) : broadcast_index(batch, a_batch);
  std::vector<std::size_t> ib = broadcast_index(batch, b_batch);
  std::vector<double> out(nb * m * n);
  for (std::size_t i = 0; i < nb; ++i) {
    MutMap(out.data() + i * m * n, m, n).noalias() =
        ConstMap(a.impl().data.data() + ia[i] * m * k, m, k) * ConstMap(b.impl().data.data() + ib[i] * k * n, k, n);
  }
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  return make_result("matmul", out_shape, std::move(out), {a, b},
                     [a, b, nb, m, k, n, ia = std::move(ia), ib = std::move(ib)](Impl& o) {
                       auto& A = a.impl();
                       auto& B = b.impl();
                       for (std::size_t i = 0; i < nb; ++i) {
                         ConstMap G(o.grad.data() + i * m * n, m, n);
                         if (A.requires_grad)
                           MutMap(A.grad_buffer().data() + ia[i] * m * k, m, k).noalias() +=
                               G * ConstMap(B.data.data() + ib[i] * k * n, k, n).transpose();
                         if (B.requires_grad)
                           MutMap(B.grad_buffer().data() + ib[i] * k * n, k, n).noalias() +=
                               ConstMap(A.data.data() + ia[i] * m * k, m, k).transpose() * G;
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  require(a.rank() >= 2, "transpose needs rank >= 2");
  std::vector<std::size_t> order(a.rank());
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[order.size() - 1], order[order.size() - 2]);
  return permute(a, order);
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& order) {
  const auto& s = a.shape();
  const std::size_t rank = s.size();
  require(order.size() == rank, "permute order has wrong length");
  std::vector<bool> used(rank, false);
  for (auto ax : order) {
    require(ax < rank && !used[ax], "permute order is not a permutation");
    used[ax] = true;
  }
  std::vector<std::size_t> in_stride(rank);
  std::size_t stride = 1;
  for (std::size_t i = rank; i-- > 0;) {
    in_stride[i] = stride;
    stride *= s[i];
  }
  Shape out_shape(rank);
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = s[order[i]];
    src_stride[i] = in_stride[order[i]];
  }
  const std::size_t total = a.numel();
  std::vector<std::size_t> map(total);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    map[flat] = src;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++counter[ax];
      src += src_stride[ax];
      if (counter[ax] < out_shape[ax]) break;
      src -= src_stride[ax] * counter[ax];
      counter[ax] = 0;
    }
  }
  const auto& ad = a.impl().data;
  std::vector<double> out(total);
  for (std::size_t i = 0; i < total; ++i) out[i] = ad[map[i]];
  return make_result("permute", out_shape, std::move(out), {a}, [a, map = std::move(map)](Impl& o) {
    auto& g = a.impl().grad_buffer();
    for (std::size_t i = 0; i < map.size(); ++i) g[map[i]] += o.grad[i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(numel(shape) == a.numel(), "reshape from " + to_string(a.shape()) + " to " + to_string(shape));
  return make_result("reshape", std::move(shape), a.impl().data, {a},
                     [a](Impl& o) { accumulate_into(a.impl(), o.grad); });
}

// --- pointwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary("add", a, b, [](double x, double y) { return x + y; },
                [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary("sub", a, b, [](double x, double y) { return x - y; },
                [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary("mul", a, b, [](double x, double y) { return x * y; },
                [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary("div", a, b, [](double x, double y) { return x / y; },
                [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary("maximum", a, b, [](double x, double y) { return x >= y ? x : y; },
                [](double x, double y) { return x >= y ? 1.0 : 0.0; },
                [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary("scale", a, [factor](double x) { return x * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary("add_scalar", a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary("sigmoid", a, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& a) {
  return unary("silu", a, [](double x) { return x * sigmoid_value(x); },
               [](double x, double) {
                 const double s = sigmoid_value(x);
                 return s * (1.0 + x * (1.0 - s));
               });
}

Tensor abs(const Tensor& a) {
  return unary("abs", a, [](double x) { return std::fabs(x); },
               [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor elementwise(ElementwiseOp op, std::span<const Tensor> inputs, double factor) {
  const std::size_t arity =
      (op == ElementwiseOp::sigmoid || op == ElementwiseOp::silu || op == ElementwiseOp::scale) ? 1 : 2;
  require(inputs.size() == arity, "elementwise op received the wrong number of inputs");
  switch (op) {
    case ElementwiseOp::add: return add(inputs[0], inputs[1]);
    case ElementwiseOp::sub: return sub(inputs[0], inputs[1]);
    case ElementwiseOp::mul: return mul(inputs[0], inputs[1]);
    case ElementwiseOp::max: return maximum(inputs[0], inputs[1]);
    case ElementwiseOp::sigmoid: return sigmoid(inputs[0]);
    case ElementwiseOp::silu: return silu(inputs[0]);
    case ElementwiseOp::scale: return scale(inputs[0], factor);
  }
  throw ContractViolation("unknown elementwise op");
}

// --- reductions -----------------------------------------------------------

Tensor sum(const Tensor& a, int axis, bool keepdim) {
  const auto& s = a.shape();
  const std::size_t ax = normalize_axis(axis, s.size());
  const std::size_t outer = product(s, 0, ax), extent = s[ax], inner = product(s, ax + 1, s.size());
  const auto& ad = a.impl().data;
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t e = 0; e < extent; ++e)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += ad[(o * extent + e) * inner + i];
  Shape out_shape = s;
  if (keepdim)
    out_shape[ax] = 1;
  else
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  if (out_shape.empty()) out_shape = {1};
  return make_result("sum", out_shape, std::move(out), {a}, [a, outer, extent, inner](Impl& o) {
    auto& g = a.impl().grad_buffer();
    for (std::size_t q = 0; q < outer; ++q)
      for (std::size_t e = 0; e < extent; ++e)
        for (std::size_t i = 0; i < inner; ++i) g[(q * extent + e) * inner + i] += o.grad[q * inner + i];
  });
}

Tensor mean(const Tensor& a, int axis, bool keepdim) {
  const std::size_t extent = a.dim(axis);
  return scale(sum(a, axis, keepdim), 1.0 / static_cast<double>(extent));
}

Tensor sum_all(const Tensor& a) { return sum(reshape(a, {a.numel()}), 0); }

Tensor mean_all(const Tensor& a) { return mean(reshape(a, {a.numel()}), 0); }

Tensor reduce(ReduceOp op, const Tensor& a, int axis, bool keepdim) {
  return op == ReduceOp::sum ? sum(a, axis, keepdim) : mean(a, axis, keepdim);
}

// --- indexing -------------------------------------------------------------

Tensor index_select(const Tensor& a, int axis, std::span<const std::size_t> indices) {
  const auto& s = a.shape();
  const std::size_t ax = normalize_axis(axis, s.size());
  const std::size_t outer = product(s, 0, ax), extent = s[ax], inner = product(s, ax + 1, s.size());
  require(!indices.empty(), "index_select with no indices");
  for (auto idx : indices) require(idx < extent, "index_select index out of range");
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  const std::size_t count = idx.size();
  const auto& ad = a.impl().data;
  std::vector<double> out(outer * count * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t c = 0; c < count; ++c)
      std::copy_n(ad.begin() + static_cast<std::ptrdiff_t>((o * extent + idx[c]) * inner), inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * count + c) * inner));
  Shape out_shape = s;
  out_shape[ax] = count;
  return make_result("index_select", out_shape, std::move(out), {a},
                     [a, outer, extent, inner, idx = std::move(idx)](Impl& o) {
                       auto& g = a.impl().grad_buffer();
                       const std::size_t count = idx.size();
                       for (std::size_t q = 0; q < outer; ++q)
                         for (std::size_t c = 0; c < count; ++c)
                           for (std::size_t i = 0; i < inner; ++i)
                             g[(q * extent + idx[c]) * inner + i] += o.grad[(q * count + c) * inner + i];
                     });
}

Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end) {
  require(begin < end && end <= a.dim(axis), "slice bounds out of range");
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return index_select(a, axis, idx);
}

Tensor scatter(const Tensor& a, int axis, std::span<const std::size_t> indices, std::size_t size) {
  const auto& s = a.shape();
  const std::size_t ax = normalize_axis(axis, s.size());
  require(indices.size() == s[ax], "scatter needs one index per slice");
  std::vector<bool> used(size, false);
  for (auto i : indices) {
    require(i < size && !used[i], "scatter indices must be distinct and in range");
    used[i] = true;
  }
  const std::size_t outer = product(s, 0, ax), count = s[ax], inner = product(s, ax + 1, s.size());
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  const auto& ad = a.impl().data;
  std::vector<double> out(outer * size * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t c = 0; c < count; ++c)
      std::copy_n(ad.begin() + static_cast<std::ptrdiff_t>((o * count + c) * inner), inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * size + idx[c]) * inner));
  Shape out_shape = s;
  out_shape[ax] = size;
  return make_result("scatter", out_shape, std::move(out), {a},
                     [a, outer, size, inner, idx = std::move(idx)](Impl& o) {
                       auto& g = a.impl().grad_buffer();
                       const std::size_t count = idx.size();
                       for (std::size_t q = 0; q < outer; ++q)
                         for (std::size_t c = 0; c < count; ++c)
                           for (std::size_t i = 0; i < inner; ++i)
                             g[(q * count + c) * inner + i] += o.grad[(q * size + idx[c]) * inner + i];
                     });
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  require(!parts.empty(), "concat of nothing");
  const Shape& s0 = parts[0].shape();
  const std::size_t ax = normalize_axis(axis, s0.size());
  std::vector<std::size_t> extents;
  std::size_t total_extent = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    require(s.size() == s0.size(), "concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      require(i == ax || s[i] == s0[i], "concat extents mismatch off the joined axis");
    extents.push_back(s[ax]);
    total_extent += s[ax];
  }
  const std::size_t outer = product(s0, 0, ax), inner = product(s0, ax + 1, s0.size());
  std::vector<double> out(outer * total_extent * inner);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& pd = parts[p].impl().data;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>(o * extents[p] * inner), extents[p] * inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * total_extent + offset) * inner));
    offset += extents[p];
  }
  Shape out_shape = s0;
  out_shape[ax] = total_extent;
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result("concat", out_shape, std::move(out), inputs,
                     [inputs, extents, outer, inner, total_extent](Impl& o) {
                       std::size_t offset = 0;
                       for (std::size_t p = 0; p < inputs.size(); ++p) {
                         auto& P = inputs[p].impl();
                         if (P.requires_grad) {
                           auto& g = P.grad_buffer();
                           for (std::size_t q = 0; q < outer; ++q)
                             for (std::size_t i = 0; i < extents[p] * inner; ++i)
                               g[q * extents[p] * inner + i] += o.grad[(q * total_extent + offset) * inner + i];
                         }
                         offset += extents[p];
                       }
                     });
}

// --- fused kernels --------------------------------------------------------

Tensor masked_softmax(const Tensor& logits, const Tensor& weights) {
  const Shape& s = logits.shape();
  require(broadcast_shapes(s, weights.shape()) == s, "mask weights must broadcast to the logits shape");
  const std::size_t width = s.back();
  const std::size_t rows = logits.numel() / width;
  const bool same = weights.shape() == s;
  std::vector<std::size_t> wi;
  if (!same) wi = broadcast_index(s, weights.shape());
  const auto& x = logits.impl().data;
  const auto& w = weights.impl().data;
  for (double v : w)
    if (v < 0.0 || v > 1.0) throw ContractViolation("mask weights must lie in [0,1]");

  std::vector<double> out(x.size());
  std::vector<double> expo(x.size());  // exp(x - m), kept for the mask adjoint
  std::vector<double> denom(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * width;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < width; ++j) {
      const double wj = w[same ? base + j : wi[base + j]];
      if (wj > 0.0) mx = std::max(mx, x[base + j]);
    }
    if (!std::isfinite(mx)) throw DegenerateRow("masked_softmax row " + std::to_string(r) + " has no surviving entry");
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      const double wj = w[same ? base + j : wi[base + j]];
      const double e = std::exp(x[base + j] - mx);
      expo[base + j] = e;
      out[base + j] = e * wj;
      total += out[base + j];
    }
    denom[r] = total;
    for (std::size_t j = 0; j < width; ++j) out[base + j] /= total;
  }
  return make_result("masked_softmax", s, std::move(out), {logits, weights},
                     [logits, weights, same, wi = std::move(wi), expo = std::move(expo), denom = std::move(denom),
                      rows, width](Impl& o) {
                       auto& L = logits.impl();
                       auto& W = weights.impl();
                       std::vector<double>* gl = L.requires_grad ? &L.grad_buffer() : nullptr;
                       std::vector<double>* gw = W.requires_grad ? &W.grad_buffer() : nullptr;
                       for (std::size_t r = 0; r < rows; ++r) {
                         const std::size_t base = r * width;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < width; ++j) dot += o.grad[base + j] * o.data[base + j];
                         for (std::size_t j = 0; j < width; ++j) {
                           const double centered = o.grad[base + j] - dot;
                           if (gl) (*gl)[base + j] += o.data[base + j] * centered;
                           if (gw) (*gw)[same ? base + j : wi[base + j]] += expo[base + j] / denom[r] * centered;
                         }
                       }
                     });
}

Tensor softmax(const Tensor& logits) { return masked_softmax(logits, Tensor::ones({1})); }

Tensor rms_norm(const Tensor& x, const Tensor& weight, double eps) {
  const std::size_t width = x.shape().back();
  require(weight.rank() == 1 && weight.dim(0) == width, "rms_norm weight must match the last axis");
  const std::size_t rows = x.numel() / width;
  const auto& xd = x.impl().data;
  const auto& wd = weight.impl().data;
  std::vector<double> out(xd.size());
  std::vector<double> inv_rms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < width; ++j) ss += xd[r * width + j] * xd[r * width + j];
    inv_rms[r] = 1.0 / std::sqrt(ss / static_cast<double>(width) + eps);
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = xd[r * width + j] * inv_rms[r] * wd[j];
  }
  return make_result("rms_norm", x.shape(), std::move(out), {x, weight},
                     [x, weight, rows, width, inv_rms = std::move(inv_rms)](Impl& o) {
                       auto& X = x.impl();
                       auto& W = weight.impl();
                       std::vector<double>* gx = X.requires_grad ? &X.grad_buffer() : nullptr;
                       std::vector<double>* gw = W.requires_grad ? &W.grad_buffer() : nullptr;
                       for (std::size_t r = 0; r < rows; ++r) {
                         const std::size_t base = r * width;
                         double proj = 0.0;
                         for (std::size_t j = 0; j < width; ++j) {
                           const double normed = X.data[base + j] * inv_rms[r];
                           if (gw) (*gw)[j] += o.grad[base + j] * normed;
                           proj += o.grad[base + j] * W.data[j] * normed;
                         }
                         if (!gx) continue;
                         proj /= static_cast<double>(width);
                         for (std::size_t j = 0; j < width; ++j) {
                           const double normed = X.data[base + j] * inv_rms[r];
                           (*gx)[base + j] += inv_rms[r] * (o.grad[base + j] * W.data[j] - normed * proj);
                         }
                       }
                     });
}

Tensor rotate_pairs(const Tensor& x, std::span<const double> angles) {
  require(x.rank() >= 2, "rotate_pairs needs [..., L, D]");
  const std::size_t width = x.shape().back();
  const std::size_t length = x.shape()[x.rank() - 2];
  require(width % 2 == 0, "rotate_pairs needs an even last axis");
  const std::size_t pairs = width / 2;
  require(angles.size() == length * pairs, "rotate_pairs angle table has the wrong size");
  std::vector<double> cosv(angles.size()), sinv(angles.size());
  for (std::size_t i = 0; i < angles.size(); ++i) {
    cosv[i] = std::cos(angles[i]);
    sinv[i] = std::sin(angles[i]);
  }
  const auto& xd = x.impl().data;
  const std::size_t blocks = x.numel() / (length * width);
  std::vector<double> out(xd.size());
  for (std::size_t b = 0; b < blocks; ++b)
    for (std::size_t t = 0; t < length; ++t)
      for (std::size_t p = 0; p < pairs; ++p) {
        const std::size_t i = (b * length + t) * width + 2 * p;
        const double c = cosv[t * pairs + p], s = sinv[t * pairs + p];
        out[i] = xd[i] * c - xd[i + 1] * s;
        out[i + 1] = xd[i] * s + xd[i + 1] * c;
      }
  return make_result("rotate_pairs", x.shape(), std::move(out), {x},
                     [x, blocks, length, pairs, width, cosv = std::move(cosv), sinv = std::move(sinv)](Impl& o) {
                       auto& g = x.impl().grad_buffer();
                       for (std::size_t b = 0; b < blocks; ++b)
                         for (std::size_t t = 0; t < length; ++t)
                           for (std::size_t p = 0; p < pairs; ++p) {
                             const std::size_t i = (b * length + t) * width + 2 * p;
                             const double c = cosv[t * pairs + p], s = sinv[t * pairs + p];
                             g[i] += o.grad[i] * c + o.grad[i + 1] * s;
                             g[i + 1] += -o.grad[i] * s + o.grad[i + 1] * c;
                           }
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets) {
  require(logits.rank() == 2, "cross_entropy expects [N, V] logits");
  const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
  require(targets.size() == rows, "cross_entropy needs one target per row");
  std::vector<std::int64_t> tgt(targets.begin(), targets.end());
  std::size_t supervised = 0;
  for (auto t : tgt) {
    if (t < 0) continue;
    require(static_cast<std::size_t>(t) < vocab, "cross_entropy target outside the vocabulary");
    ++supervised;
  }
  if (supervised == 0) throw ContractViolation("cross_entropy with no supervised positions");
  const auto& x = logits.impl().data;
  std::vector<double> probs(x.size(), 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (tgt[r] < 0) continue;
    const double* row = x.data() + r * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    total += log_z - row[tgt[r]];
    for (std::size_t j = 0; j < vocab; ++j) probs[r * vocab + j] = std::exp(row[j] - log_z);
  }
  const double inv = 1.0 / static_cast<double>(supervised);
  return make_result("cross_entropy", {1}, {total * inv}, {logits},
                     [logits, probs = std::move(probs), tgt = std::move(tgt), vocab, inv](Impl& o) {
                       auto& g = logits.impl().grad_buffer();
                       const double scale = o.grad[0] * inv;
                       for (std::size_t r = 0; r < tgt.size(); ++r) {
                         if (tgt[r] < 0) continue;
                         for (std::size_t j = 0; j < vocab; ++j) g[r * vocab + j] += scale * probs[r * vocab + j];
                         g[r * vocab + static_cast<std::size_t>(tgt[r])] -= scale;
                       }
                     });
}

Tensor minmax_normalize(const Tensor& x, std::span<const std::uint8_t> support) {
  require(support.size() == x.numel(), "minmax_normalize support must cover every element");
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / width;
  const auto& xd = x.impl().data;
  std::vector<std::uint8_t> sup(support.begin(), support.end());
  std::vector<double> out(xd.size(), 0.0);
  // Per row: argmin, argmax, range (0 marks a constant or empty row).
  std::vector<std::size_t> lo(rows, 0), hi(rows, 0);
  std::vector<double> range(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * width;
    bool any = false;
    for (std::size_t j = 0; j < width; ++j) {
      if (!sup[base + j]) continue;
      if (!any) {
        lo[r] = hi[r] = j;
        any = true;
        continue;
      }
      if (xd[base + j] < xd[base + lo[r]]) lo[r] = j;
      if (xd[base + j] > xd[base + hi[r]]) hi[r] = j;
    }
    if (!any) continue;
    const double mn = xd[base + lo[r]], mx = xd[base + hi[r]];
    const double span = mx - mn;
    const double tol = 1e-12 * std::max({1.0, std::fabs(mn), std::fabs(mx)});
    range[r] = span > tol ? span : 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      if (!sup[base + j]) continue;
      out[base + j] = range[r] > 0.0 ? (xd[base + j] - mn) / range[r] : 0.5;
    }
  }
  return make_result("minmax_normalize", x.shape(), std::move(out), {x},
                     [x, sup = std::move(sup), lo = std::move(lo), hi = std::move(hi), range = std::move(range),
                      rows, width](Impl& o) {
                       auto& X = x.impl();
                       auto& g = X.grad_buffer();
                       for (std::size_t r = 0; r < rows; ++r) {
                         if (range[r] <= 0.0) continue;
                         const std::size_t base = r * width;
                         const double mn = X.data[base + lo[r]], mx = X.data[base + hi[r]];
                         const double inv = 1.0 / range[r];
                         double to_min = 0.0, to_max = 0.0;
                         for (std::size_t j = 0; j < width; ++j) {
                           if (!sup[base + j]) continue;
                           const double gj = o.grad[base + j];
                           g[base + j] += gj * inv;
                           to_min += gj * (X.data[base + j] - mx) * inv * inv;
                           to_max -= gj * (X.data[base + j] - mn) * inv * inv;
                         }
                         g[base + lo[r]] += to_min;
                         g[base + hi[r]] += to_max;
                       }
                     });
}

}  // namespace atp::num
