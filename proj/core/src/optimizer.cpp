#include "csam/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace csam {

void adam_step(std::span<Tensor* const> params, std::span<const std::span<const double>> grads,
               OptimizerState& state, const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: params/grads count mismatch");
  if (!(cfg.lr > 0)) throw std::invalid_argument("adam_step: lr must be positive");
  if (state.m.empty() && state.t == 0) {
    for (auto* p : params) {
      state.m.emplace_back(p->numel(), 0.0);
      state.v.emplace_back(p->numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: state does not match params");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::size_t n = params[i]->numel();
    if (state.m[i].size() != n || state.v[i].size() != n ||
        (!grads[i].empty() && grads[i].size() != n)) {
      throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(i));
    }
  }

  ++state.t;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i]->mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto g = grads[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double gj = (g.empty() ? 0.0 : g[j]) + cfg.weight_decay * theta[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      theta[j] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

void adam_step(const std::vector<NamedTensor>& params, OptimizerState& state,
               const AdamConfig& cfg) {
  std::vector<Tensor*> tensors;
  std::vector<std::span<const double>> grads;
  for (const auto& p : params) {
    tensors.push_back(p.tensor);
    grads.push_back(p.tensor->grad());
  }
  adam_step(tensors, grads, state, cfg);
}

}  // namespace csam
