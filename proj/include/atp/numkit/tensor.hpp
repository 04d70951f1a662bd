#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "atp/error.hpp"

namespace atp::num {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct Impl;

// One executed primitive. `backward` reads the output's grad and accumulates
// into the inputs it captured.
struct Node {
  std::uint64_t seq = 0;
  const char* op = "";
  std::vector<std::shared_ptr<Impl>> inputs;
  std::function<void(Impl& out)> backward;
};

struct Impl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something flows in
  bool requires_grad = false;
  std::shared_ptr<Node> creator;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major tensor of doubles with optional gradient tracking.
///
/// A Tensor is a cheap handle; copies alias the same storage. Tensors produced
/// by ops on tracked inputs remember the op that made them, which is what
/// `backward` replays.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor full(Shape shape, double value);
  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
  static Tensor scalar(double value) { return from({1}, {value}); }
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0);
  static Tensor identity(std::size_t n);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(int axis) const;
  std::size_t numel() const { return impl().data.size(); }

  std::span<const double> data() const { return impl().data; }
  /// Mutable view for leaves only (optimizer updates, finite differences).
  std::span<double> mutable_data();
  std::vector<double> to_vector() const { return impl().data; }
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return impl().requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return impl().creator == nullptr; }
  bool has_grad() const { return !impl().grad.empty(); }
  /// Accumulated gradient; empty span if none has flowed in yet.
  std::span<const double> grad() const { return impl().grad; }
  void zero_grad() { impl().grad.clear(); }

  /// Same values, no history, not tracked.
  Tensor detach() const;

  detail::Impl& impl() const;
  const std::shared_ptr<detail::Impl>& handle() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::Impl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::Impl> impl_;
};

/// Reverse pass from a single-element loss. Each recorded op reachable from
/// `loss` runs its adjoint exactly once, newest first. Leaf gradients
/// accumulate across calls until cleared; intermediate buffers are released.
void backward(const Tensor& loss);

/// While alive, ops record nothing (evaluation / inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Keeps freed tensor buffers in the process heap instead of returning them
/// to the OS after every op. Call once at startup; a no-op off glibc.
void retain_freed_memory();

namespace detail {

// Builds an op result, validating finiteness and wiring the record when any
// input is tracked.
Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   std::vector<Tensor> inputs,
                   std::function<void(Impl& out)> backward);

}  // namespace detail

}  // namespace atp::num
