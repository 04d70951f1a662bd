#include "atp/numkit/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace atp::num {

namespace {

std::atomic<std::uint64_t> g_next_seq{1};
thread_local bool t_grad_enabled = true;

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  require(!shape.empty(), "tensor shape must have at least one extent");
  for (auto e : shape) require(e > 0, "tensor extents must be positive, got " + to_string(shape));
  require(num::numel(shape) == values.size(),
          "tensor data length " + std::to_string(values.size()) + " does not match shape " +
              to_string(shape));
  for (double v : values)
    if (!std::isfinite(v)) throw NumericError("non-finite value in tensor construction");
  auto impl = std::make_shared<detail::Impl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value) {
  const auto n = num::numel(shape);
  return from(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(num::numel(shape));
  for (auto& v : values) v = dist(rng);
  return from(std::move(shape), std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  std::vector<double> values(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) values[i * n + i] = 1.0;
  return from({n, n}, std::move(values));
}

detail::Impl& Tensor::impl() const {
  if (!impl_) throw ContractViolation("use of an undefined tensor");
  return *impl_;
}

std::size_t Tensor::dim(int axis) const {
  const int r = static_cast<int>(rank());
  if (axis < 0) axis += r;
  require(axis >= 0 && axis < r, "axis out of range for shape " + to_string(shape()));
  return shape()[static_cast<std::size_t>(axis)];
}

std::span<double> Tensor::mutable_data() {
  require(is_leaf(), "only leaf tensors may be written in place");
  return impl().data;
}

double Tensor::item() const {
  require(numel() == 1, "item() needs a single-element tensor, got " + to_string(shape()));
  return impl().data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  require(index.size() == s.size(), "index rank mismatch");
  std::size_t flat = 0;
  std::size_t i = 0;
  for (auto v : index) {
    require(v < s[i], "index out of range");
    flat = flat * s[i] + v;
    ++i;
  }
  return impl().data[flat];
}

Tensor& Tensor::set_requires_grad(bool on) {
  require(is_leaf() || on, "cannot untrack a non-leaf tensor");
  impl().requires_grad = on;
  return *this;
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<detail::Impl>();
  impl->shape = shape();
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

namespace detail {

Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   std::vector<Tensor> inputs, std::function<void(Impl& out)> backward) {
  for (double v : values)
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite output from ") + op);
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  bool tracked = false;
  if (t_grad_enabled)
    for (const auto& t : inputs) tracked = tracked || t.requires_grad();
  if (tracked) {
    auto node = std::make_shared<Node>();
    node->seq = g_next_seq.fetch_add(1);
    node->op = op;
    node->inputs.reserve(inputs.size());
    for (const auto& t : inputs) node->inputs.push_back(t.handle());
    node->backward = std::move(backward);
    impl->requires_grad = true;
    impl->creator = std::move(node);
  }
  return Tensor(std::move(impl));
}

}  // namespace detail

void retain_freed_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, std::numeric_limits<int>::max());
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

void backward(const Tensor& loss) {
  require(loss.numel() == 1, "backward needs a scalar loss, got shape " + to_string(loss.shape()));
  auto& root = loss.impl();
  require(root.requires_grad, "backward on a loss that tracks no tensors");

  std::vector<detail::Impl*> order;
  std::unordered_set<detail::Impl*> seen;
  std::vector<detail::Impl*> stack{&root};
  while (!stack.empty()) {
    auto* cur = stack.back();
    stack.pop_back();
    if (!seen.insert(cur).second) continue;
    if (!cur->creator) continue;
    order.push_back(cur);
    for (const auto& in : cur->creator->inputs)
      if (in->requires_grad) stack.push_back(in.get());
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Impl* a, const detail::Impl* b) { return a->creator->seq > b->creator->seq; });

  root.grad_buffer()[0] += 1.0;
  for (auto* impl : order) {
    if (impl->grad.empty()) continue;
    impl->creator->backward(*impl);
    impl->grad.clear();
    impl->grad.shrink_to_fit();
  }
}

}  // namespace atp::num
