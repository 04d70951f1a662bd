#pragma once

// Central finite-difference oracle. It only reads tensor values and calls the
// forward function again, so it shares nothing with the adjoint code it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "atp/numkit/tensor.hpp"

namespace atp::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
};

inline double rel_error(double analytic, double numeric) {
  const double scale = std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
  return std::fabs(analytic - numeric) / scale;
}

/// Runs `loss_fn` once with tracking for analytic grads, then perturbs each
/// selected entry by +-eps. `pick` selects (leaf, flat index) pairs to check;
/// by default every entry of every leaf is checked.
inline GradCheckResult grad_check(std::vector<num::Tensor> leaves, const std::function<num::Tensor()>& loss_fn,
                                  double eps = 1e-5,
                                  std::vector<std::pair<std::size_t, std::size_t>> pick = {}) {
  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  num::backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  for (auto& leaf : leaves) {
    auto g = leaf.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(leaf.numel(), 0.0);
  }
  if (pick.empty())
    for (std::size_t l = 0; l < leaves.size(); ++l)
      for (std::size_t i = 0; i < leaves[l].numel(); ++i) pick.emplace_back(l, i);

  GradCheckResult result;
  num::NoGradGuard no_grad;
  for (auto [l, i] : pick) {
    auto values = leaves[l].mutable_data();
    const double saved = values[i];
    values[i] = saved + eps;
    const double up = loss_fn().item();
    values[i] = saved - eps;
    const double down = loss_fn().item();
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    result.max_rel_error = std::max(result.max_rel_error, rel_error(analytic[l][i], numeric));
    result.max_abs_error = std::max(result.max_abs_error, std::fabs(analytic[l][i] - numeric));
    ++result.checked;
  }
  return result;
}

}  // namespace atp::testing
