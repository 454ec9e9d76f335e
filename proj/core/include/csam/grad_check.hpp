#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>

#include "csam/tensor.hpp"

namespace csam {

/// Records the branch choices of piecewise ops on this thread while alive.
/// Nested traces restore the outer state on destruction.
class BranchTrace {
 public:
  BranchTrace();
  ~BranchTrace();
  BranchTrace(const BranchTrace&) = delete;
  BranchTrace& operator=(const BranchTrace&) = delete;

  std::uint64_t digest() const;
  void reset();

 private:
  bool previous_enabled_;
  std::uint64_t previous_digest_;
};

struct GradCheckResult {
  double max_error = 0.0;     // max |analytic - numeric| / max(1, |numeric|)
  std::size_t worst_index = 0;
  double analytic = 0.0;      // values at worst_index
  double numeric = 0.0;
  std::size_t coordinates = 0;
  /// Coordinates whose +-eps stencil changed a leaky-ReLU sign or a max
  /// argmax; these were re-measured with a smaller step.
  std::size_t kink_coordinates = 0;
};

struct GradCheckOptions {
  double eps = 1e-5;
  /// Halve the step (down to min_eps) for coordinates whose stencil
  /// straddles a kink of a piecewise op.
  bool kink_aware = false;
  double min_eps = 1e-9;
};

/// Central-difference check of d f / d param. `param` must be a leaf; it is
/// perturbed in place and restored. f must be deterministic (fix any RNG
/// inside it) and return a single-element tensor.
GradCheckResult grad_check(const std::function<Tensor()>& f, Tensor& param, double eps = 1e-5);
GradCheckResult grad_check(const std::function<Tensor()>& f, Tensor& param,
                           const GradCheckOptions& options);

/// Convenience form: f receives a fresh requires-grad leaf holding `x`.
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double eps = 1e-5);

/// Test hook: while alive, backward rules of ops named `op_name` see their
/// output gradient multiplied by `scale`. Thread-local.
class BackwardFaultInjection {
 public:
  BackwardFaultInjection(std::string op_name, double scale);
  ~BackwardFaultInjection();
  BackwardFaultInjection(const BackwardFaultInjection&) = delete;
  BackwardFaultInjection& operator=(const BackwardFaultInjection&) = delete;

 private:
  std::string previous_op_;
  double previous_scale_;
};

}  // namespace csam
