#pragma once

#include <string>
#include <vector>

#include "atp/numkit/tensor.hpp"

namespace atp::num {

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// A group of parameters sharing one learning rate.
struct ParamGroup {
  std::vector<Tensor> params;
  AdamWOptions options;
};

/// Decoupled-weight-decay Adam with bias correction. Moments are kept per
/// parameter in group order, so a fixed parameter order gives a fixed
/// trajectory.
class AdamW {
 public:
  explicit AdamW(std::vector<ParamGroup> groups);

  /// Applies one update from the accumulated grads. Parameters without a grad
  /// are treated as having a zero gradient. Throws NumericError on non-finite
  /// gradients before touching any parameter.
  void step();
  void zero_grad();
  std::size_t steps() const { return steps_; }

  /// Rescales all grads so their joint L2 norm is at most `max_norm`; returns
  /// the norm before clipping.
  double clip_grad_norm(double max_norm);

 private:
  struct Slot {
    std::vector<double> m, v;
  };
  std::vector<ParamGroup> groups_;
  std::vector<std::vector<Slot>> slots_;
  std::size_t steps_ = 0;
};

/// Single-parameter update rule, exposed for checking the arithmetic.
void adamw_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                  std::span<double> v, std::size_t step, const AdamWOptions& options);

}  // namespace atp::num
