#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace csam {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Receives the output gradient and one writable span per op input. A span
/// is empty when that input does not require a gradient. Rules accumulate
/// (+=) into the input spans.
using BackwardFn = std::function<void(std::span<const double> grad_out,
                                      std::span<const std::span<double>> grad_in)>;

namespace detail {

struct TensorImpl;

struct OpNode {
  std::string name;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
};

/// Piecewise ops (leaky ReLU signs, max argmaxes) report their branch
/// choices here while a BranchTrace is active, so a caller can tell whether
/// two evaluations took the same smooth piece.
bool branch_trace_enabled();
void trace_branch(std::uint64_t choice);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::shared_ptr<OpNode> node;  // null for leaves
};

}  // namespace detail

/// Dense row-major float64 tensor handle. Copies share storage; op results
/// are never mutated after creation. Leaves (parameters, inputs) may be
/// updated in place through mutable_data().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Only valid on leaves; throws std::logic_error on op outputs.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  bool is_leaf() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Copy of the values with no graph history.
  Tensor detach(bool requires_grad = false) const;

  const void* id() const { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  const detail::TensorImpl& impl() const;

  std::shared_ptr<detail::TensorImpl> impl_;

  friend Tensor record_op(std::string_view, Shape, std::vector<double>,
                          const std::vector<Tensor>&, BackwardFn);
  friend class ComputationTape;
};

/// Creates an op output. Throws NonFiniteError if any value is NaN/Inf.
/// The backward rule is retained only when some input requires a gradient
/// and gradient recording is enabled.
Tensor record_op(std::string_view name, Shape shape, std::vector<double> data,
                 const std::vector<Tensor>& inputs, BackwardFn backward);

/// Disables graph recording on this thread for its lifetime.
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

/// Ops reachable from a scalar output, in topological order (inputs first).
class ComputationTape {
 public:
  explicit ComputationTape(const Tensor& output);

  std::size_t size() const { return order_.size(); }
  std::vector<std::string> op_names() const;

  /// Propagates d(output)/d(.) to every requires_grad ancestor. Intermediate
  /// grads are always cleared first; leaf grads are cleared unless
  /// `accumulate` is set, in which case the new gradient is added.
  void replay(bool accumulate = false) const;

 private:
  std::shared_ptr<detail::TensorImpl> output_;
  std::vector<std::shared_ptr<detail::TensorImpl>> order_;
};

/// Resets every leaf grad reachable from `loss`, then back-propagates.
void backward(const Tensor& loss);
/// Same as backward() but adds into existing leaf grads.
void backward_accumulate(const Tensor& loss);

}  // namespace csam
