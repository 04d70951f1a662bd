#include "atp/flops/flops.hpp"

#include <string>

#include "atp/error.hpp"
#include "atp/segments.hpp"

namespace atp::flops {

namespace {

Count mul(Count a, Count b) {
  Count out = 0;
  if (__builtin_mul_overflow(a, b, &out)) throw NumericError("FLOP count overflows 64 bits");
  return out;
}

Count add(Count a, Count b) {
  Count out = 0;
  if (__builtin_add_overflow(a, b, &out)) throw NumericError("FLOP count overflows 64 bits");
  return out;
}

}  // namespace

Count layer_flops(Count L, Count d, Count m) {
  return add(add(mul(4, mul(L, mul(d, d))), mul(2, mul(mul(L, L), d))), mul(2, mul(L, mul(d, m))));
}

void FlopsSpec::validate() const {
  for (std::size_t k = 0; k < plan.size(); ++k) {
    if (plan[k].site >= n_layers)
      throw ConfigError("plan site " + std::to_string(plan[k].site) + " is not below n_layers");
    if (plan[k].retained > L0) throw ConfigError("retained count exceeds L0");
    if (k > 0 && plan[k].site <= plan[k - 1].site) throw ConfigError("plan sites must be strictly increasing");
    if (k > 0 && plan[k].retained > plan[k - 1].retained)
      throw ConfigError("retained counts must not grow along the plan");
  }
  if (n_heads == 0 || d % n_heads != 0) throw ConfigError("d must split evenly into n_heads");
}

Reduction model_reduction(const FlopsSpec& spec) {
  spec.validate();
  const std::size_t extra = spec.include_text ? spec.text_len : 0;
  std::vector<std::size_t> sites;
  for (const auto& e : spec.plan) sites.push_back(e.site);
  Reduction r;
  const Count full = layer_flops(spec.L0 + extra, spec.d, spec.m);
  r.baseline = mul(spec.n_layers, full);
  for (const auto& seg : layer_segments(spec.n_layers, sites)) {
    SegmentCost c;
    c.begin = seg.begin;
    c.end = seg.end;
    c.tokens = (seg.source < 0 ? spec.L0 : spec.plan[static_cast<std::size_t>(seg.source)].retained) + extra;
    c.per_layer = layer_flops(c.tokens, spec.d, spec.m);
    c.total = mul(seg.length(), c.per_layer);
    r.pruned = add(r.pruned, c.total);
    r.segments.push_back(c);
  }
  r.fraction = r.baseline == 0 ? 0.0 : 1.0 - static_cast<double>(r.pruned) / static_cast<double>(r.baseline);
  return r;
}

Count flops_oracle(const FlopsSpec& spec, const OracleOptions& options) {
  spec.validate();
  const std::size_t extra = spec.include_text ? spec.text_len : 0;
  const Count d = spec.d, m = spec.m, heads = spec.n_heads, hd = spec.d / spec.n_heads;
  // [M, K] x [K, N]
  const auto gemm = [](Count M, Count K, Count N) { return mul(M, mul(K, N)); };
  Count total = 0;
  Count tokens = spec.L0;
  std::size_t next = 0;
  for (std::size_t layer = 0; layer < spec.n_layers; ++layer) {
    if (next < spec.plan.size() && spec.plan[next].site == layer) tokens = spec.plan[next++].retained;
    const Count L = tokens + extra;
    for (int proj = 0; proj < 4; ++proj) total = add(total, gemm(L, d, d));  // q, k, v, o
    for (Count h = 0; h < heads; ++h) {
      total = add(total, gemm(L, hd, L));  // q k^T
      total = add(total, gemm(L, L, hd));  // probs v
    }
    total = add(total, gemm(L, d, m));  // up
    if (options.count_gate) total = add(total, gemm(L, d, m));
    total = add(total, gemm(L, m, d));  // down
  }
  return total;
}

}  // namespace atp::flops
