#include "csam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "csam/grad_check.hpp"

namespace csam {

namespace {

thread_local bool g_grad_enabled = true;

// Set by BackwardFaultInjection; only read while recording ops.
struct FaultState {
  std::string op_name;
  double scale = 1.0;
};
thread_local FaultState g_fault;

struct BranchState {
  bool enabled = false;
  std::uint64_t digest = 0;
};
thread_local BranchState g_branch;

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = csam::numel(shape);
  return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive: " + to_string(shape));
  }
  if (csam::numel(shape) != data.size()) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     to_string(shape));
  }
  for (double v : data) {
    if (!std::isfinite(v)) throw NonFiniteError("non-finite value in tensor data");
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

const detail::TensorImpl& Tensor::impl() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("axis out of range for " + to_string(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return impl().data.size(); }

std::span<const double> Tensor::data() const { return impl().data; }

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  if (impl_->node) throw std::logic_error("mutable_data() on a non-leaf tensor");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return impl().data[0];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

bool Tensor::is_leaf() const { return impl().node == nullptr; }

std::span<const double> Tensor::grad() const { return impl().grad; }

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach(bool requires_grad) const {
  return from_data(shape(), impl().data, requires_grad);
}

Tensor record_op(std::string_view name, Shape shape, std::vector<double> data,
                 const std::vector<Tensor>& inputs, BackwardFn backward) {
  if (csam::numel(shape) != data.size()) {
    throw ShapeError(std::string(name) + ": output length does not match " + to_string(shape));
  }
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw NonFiniteError(std::string(name) + " produced a non-finite value");
    }
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);

  bool any_grad = false;
  for (const auto& in : inputs) any_grad = any_grad || in.requires_grad();
  if (any_grad && g_grad_enabled) {
    impl->requires_grad = true;
    auto node = std::make_shared<detail::OpNode>();
    node->name = std::string(name);
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.impl_);
    if (!g_fault.op_name.empty() && g_fault.op_name == name) {
      const double scale = g_fault.scale;
      node->backward = [inner = std::move(backward), scale](
                           std::span<const double> g, std::span<const std::span<double>> gin) {
        std::vector<double> scaled(g.begin(), g.end());
        for (double& v : scaled) v *= scale;
        inner(scaled, gin);
      };
    } else {
      node->backward = std::move(backward);
    }
    impl->node = std::move(node);
  }
  return Tensor(std::move(impl));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

ComputationTape::ComputationTape(const Tensor& output) : output_(output.impl_) {
  if (!output_) throw std::logic_error("tape over undefined tensor");
  if (output_->data.size() != 1) {
    throw ShapeError("backward requires a scalar output, got " + to_string(output_->shape));
  }
  // Iterative post-order DFS; post-order of a DAG is a topological order.
  std::unordered_set<const detail::TensorImpl*> visited;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(output_.get(), 0);
  visited.insert(output_.get());
  std::vector<detail::TensorImpl*> post;
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    const std::size_t n_inputs = t->node ? t->node->inputs.size() : 0;
    if (next < n_inputs) {
      detail::TensorImpl* child = t->node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      post.push_back(t);
      stack.pop_back();
    }
  }
  // Re-acquire owning pointers so the tape keeps the graph alive.
  std::unordered_map<const detail::TensorImpl*, std::shared_ptr<detail::TensorImpl>> owners;
  owners.emplace(output_.get(), output_);
  for (auto* t : post) {
    if (!t->node) continue;
    for (const auto& in : t->node->inputs) owners.emplace(in.get(), in);
  }
  order_.reserve(post.size());
  for (auto* t : post) order_.push_back(owners.at(t));
}

std::vector<std::string> ComputationTape::op_names() const {
  std::vector<std::string> names;
  for (const auto& t : order_) {
    if (t->node) names.push_back(t->node->name);
  }
  return names;
}

void ComputationTape::replay(bool accumulate) const {
  if (!output_->requires_grad) return;
  for (const auto& t : order_) {
    if (t->node || !accumulate || t->grad.size() != t->data.size()) {
      t->grad.assign(t->data.size(), 0.0);
    }
  }
  output_->grad[0] += 1.0;

  std::vector<std::span<double>> grad_in;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    const auto& t = *it;
    if (!t->node) continue;
    grad_in.clear();
    for (const auto& in : t->node->inputs) {
      if (in->requires_grad) {
        grad_in.emplace_back(in->grad);
      } else {
        grad_in.emplace_back();
      }
    }
    t->node->backward(t->grad, grad_in);
  }
}

void backward(const Tensor& loss) { ComputationTape(loss).replay(false); }

void backward_accumulate(const Tensor& loss) { ComputationTape(loss).replay(true); }

bool detail::branch_trace_enabled() { return g_branch.enabled; }

void detail::trace_branch(std::uint64_t choice) {
  g_branch.digest = (g_branch.digest ^ choice) * 0x100000001b3ULL;
}

BranchTrace::BranchTrace() : previous_enabled_(g_branch.enabled), previous_digest_(g_branch.digest) {
  g_branch.enabled = true;
  g_branch.digest = 0xcbf29ce484222325ULL;
}

BranchTrace::~BranchTrace() {
  g_branch.enabled = previous_enabled_;
  g_branch.digest = previous_digest_;
}

std::uint64_t BranchTrace::digest() const { return g_branch.digest; }

void BranchTrace::reset() { g_branch.digest = 0xcbf29ce484222325ULL; }

BackwardFaultInjection::BackwardFaultInjection(std::string op_name, double scale)
    : previous_op_(g_fault.op_name), previous_scale_(g_fault.scale) {
  g_fault.op_name = std::move(op_name);
  g_fault.scale = scale;
}

BackwardFaultInjection::~BackwardFaultInjection() {
  g_fault.op_name = previous_op_;
  g_fault.scale = previous_scale_;
}

}  // namespace csam
