#include "atp/numkit/optim.hpp"

#include <cmath>

namespace atp::num {

void adamw_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                  std::span<double> v, std::size_t step, const AdamWOptions& o) {
  require(param.size() == m.size() && param.size() == v.size(), "optimizer state shape mismatch");
  require(grad.empty() || grad.size() == param.size(), "gradient shape mismatch");
  require(step >= 1, "optimizer steps count from 1");
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g;
    v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g * g;
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    param[i] -= o.lr * (m_hat / (std::sqrt(v_hat) + o.eps) + o.weight_decay * param[i]);
  }
}

AdamW::AdamW(std::vector<ParamGroup> groups) : groups_(std::move(groups)) {
  for (const auto& group : groups_) {
    auto& slots = slots_.emplace_back();
    for (const auto& p : group.params) {
      require(p.is_leaf(), "optimizer parameters must be leaves");
      slots.push_back({std::vector<double>(p.numel(), 0.0), std::vector<double>(p.numel(), 0.0)});
    }
  }
}

void AdamW::step() {
  for (const auto& group : groups_)
    for (const auto& p : group.params)
      for (double g : p.grad())
        if (!std::isfinite(g)) throw NumericError("non-finite gradient in optimizer step");
  ++steps_;
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    auto& group = groups_[gi];
    for (std::size_t pi = 0; pi < group.params.size(); ++pi) {
      auto& p = group.params[pi];
      auto& slot = slots_[gi][pi];
      adamw_update(p.mutable_data(), p.grad(), slot.m, slot.v, steps_, group.options);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& group : groups_)
    for (auto& p : group.params) p.zero_grad();
}

double AdamW::clip_grad_norm(double max_norm) {
  double ss = 0.0;
  for (const auto& group : groups_)
    for (const auto& p : group.params)
      for (double g : p.grad()) ss += g * g;
  const double norm = std::sqrt(ss);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (auto& group : groups_)
      for (auto& p : group.params)
        for (auto& g : p.impl().grad) g *= factor;
  }
  return norm;
}

}  // namespace atp::num
