#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "csam/attention.hpp"

namespace csam {

struct AdamConfig {
  double lr = 1e-4;
  double weight_decay = 1e-5;  // L2-coupled: added to the gradient
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;
};

/// One bias-corrected Adam update of `theta` given `grad`. The state must
/// either be empty (first call) or mirror `params` exactly.
void adam_step(std::span<Tensor* const> params, std::span<const std::span<const double>> grads,
               OptimizerState& state, const AdamConfig& cfg);

/// Uses each parameter's accumulated grad; a missing grad counts as zero.
void adam_step(const std::vector<NamedTensor>& params, OptimizerState& state,
               const AdamConfig& cfg);

}  // namespace csam
