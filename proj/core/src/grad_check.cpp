#include "csam/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <tuple>
#include <utility>
#include <vector>

namespace csam {

GradCheckResult grad_check(const std::function<Tensor()>& f, Tensor& param, double eps) {
  GradCheckOptions options;
  options.eps = eps;
  return grad_check(f, param, options);
}

GradCheckResult grad_check(const std::function<Tensor()>& f, Tensor& param,
                           const GradCheckOptions& options) {
  if (!param.is_leaf()) throw std::logic_error("grad_check: parameter must be a leaf");
  if (!param.requires_grad()) throw std::logic_error("grad_check: parameter must require grad");

  const Tensor out = f();
  if (out.numel() != 1) throw ShapeError("grad_check: f must be scalar-valued");
  // Parameters the output does not reach keep a stale (or empty) grad.
  param.zero_grad();
  backward(out);
  std::vector<double> analytic(param.grad().begin(), param.grad().end());
  analytic.resize(param.numel(), 0.0);

  GradCheckResult result;
  result.coordinates = param.numel();
  auto values = param.mutable_data();
  NoGradGuard no_grad;
  std::optional<BranchTrace> trace;
  std::uint64_t base_digest = 0;
  if (options.kink_aware) {
    trace.emplace();
    f();
    base_digest = trace->digest();
  }
  // Evaluates f at values[i] + step; returns the value and the branch digest.
  auto eval_at = [&](std::size_t i, double original, double step) {
    values[i] = original + step;
    if (trace) trace->reset();
    const double v = f().item();
    return std::make_pair(v, trace ? trace->digest() : 0);
  };
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double original = values[i];
    double eps = options.eps;
    auto [f_plus, d_plus] = eval_at(i, original, eps);
    auto [f_minus, d_minus] = eval_at(i, original, -eps);
    if (trace && (d_plus != base_digest || d_minus != base_digest)) {
      ++result.kink_coordinates;
      while (eps > options.min_eps && (d_plus != base_digest || d_minus != base_digest)) {
        eps *= 0.5;
        std::tie(f_plus, d_plus) = eval_at(i, original, eps);
        std::tie(f_minus, d_minus) = eval_at(i, original, -eps);
      }
    }
    values[i] = original;

    const double numeric = (f_plus - f_minus) / (2.0 * eps);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
    if (err > result.max_error || i == 0) {
      result.max_error = std::max(result.max_error, err);
      result.worst_index = i;
      result.analytic = analytic[i];
      result.numeric = numeric;
    }
  }
  return result;
}

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double eps) {
  Tensor leaf = x.detach(true);
  return grad_check([&] { return f(leaf); }, leaf, eps);
}

}  // namespace csam
