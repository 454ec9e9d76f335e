#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "csam/rng.hpp"
#include "csam/tensor.hpp"

// Cross-slice attention: a channel gate shared by every slice and pixel, a
// spatial gate shared by every slice and channel, and a per-slice gate drawn
// from a low-rank Gaussian over the slice axis. Applied in that order to an
// (l, c, h, w) feature map.

namespace csam {

enum class Mode { kTrain, kEval };

/// Added to softplus(D') so every diagonal variance is strictly positive.
inline constexpr double kVarianceFloor = 1e-4;

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

/// Hyperparameters that fix the weight shapes of one attention module.
struct CsamShape {
  std::size_t slices = 8;
  std::size_t channels = 8;
  std::size_t rank = 4;
  std::size_t kernel = 7;
  std::size_t reduction = 8;        // channel MLP hidden = ceil(c / reduction)
  std::size_t slice_reduction = 2;  // slice MLP hidden = ceil(l / slice_reduction)

  std::size_t channel_hidden() const;
  std::size_t slice_hidden() const;
  void validate() const;
};

/// Weights of the slice gate: the shared slice MLP (l -> l_hidden -> l) and
/// the three maps producing the Gaussian's mean, low-rank factor and
/// diagonal. No biases.
struct SliceAttentionParams {
  Tensor mlp_w1;  // (l_hidden, l)
  Tensor mlp_w2;  // (l, l_hidden)
  Tensor w_mu;    // (l, l)
  Tensor w_p;     // (l * r, l)
  Tensor w_d;     // (l, l)

  static SliceAttentionParams zeros(std::size_t slices, std::size_t rank, std::size_t hidden);
  static SliceAttentionParams random(std::size_t slices, std::size_t rank, std::size_t hidden,
                                     Rng& rng);

  std::size_t slices() const { return w_mu.dim(0); }
  std::size_t rank() const { return w_p.dim(0) / w_mu.dim(0); }
  std::vector<NamedTensor> named(const std::string& prefix);
  std::size_t parameter_count() const;
};

struct CsamParams {
  Tensor mlp_w1;      // (c_hidden, c)
  Tensor mlp_w2;      // (c, c_hidden)
  Tensor pos_kernel;  // (1, 2, k, k)
  SliceAttentionParams slice;

  static CsamParams zeros(const CsamShape& shape);
  static CsamParams random(const CsamShape& shape, Rng& rng);

  std::size_t channels() const { return mlp_w1.dim(1); }
  std::vector<NamedTensor> named(const std::string& prefix);
  std::size_t parameter_count() const;
};

/// N(mu, P P^T + diag(d)).
struct LowRankGaussian {
  Tensor mu;        // (l, 1)
  Tensor p_factor;  // (l, r)
  Tensor d_diag;    // (l, 1), strictly positive

  std::size_t slices() const { return mu.dim(0); }
  std::size_t rank() const { return p_factor.dim(1); }
  /// Dense covariance, row-major l x l.
  std::vector<double> covariance() const;
};

/// Standard-normal draws for one reparameterized sample.
struct SliceNoise {
  std::vector<double> rank_noise;  // r
  std::vector<double> diag_noise;  // l

  static SliceNoise draw(std::size_t slices, std::size_t rank, Rng& rng);
};

struct AttentionRecord {
  Tensor m_semantic;    // (1, c, 1, 1)
  Tensor m_positional;  // (1, 1, h, w)
  Tensor m_slice;       // (l, 1, 1, 1)
  LowRankGaussian gaussian;
  Tensor z;             // (l, 1)
};

struct SliceGate {
  Tensor gate;  // (l, 1, 1, 1)
  LowRankGaussian gaussian;
  Tensor z;
};

Tensor semantic_attention(const Tensor& features, const CsamParams& params);
Tensor positional_attention(const Tensor& features, const CsamParams& params);

/// Maps the pooled slice descriptor V (l, 1) to the Gaussian parameters.
LowRankGaussian slice_gaussian(const Tensor& descriptor, const SliceAttentionParams& params);

/// Train mode draws z = mu + P e1 + sqrt(d) * e2; eval mode returns mu.
Tensor sample_slice(const LowRankGaussian& g, Mode mode, Rng& rng);
Tensor sample_slice(const LowRankGaussian& g, const SliceNoise& noise);

SliceGate slice_attention(const Tensor& features, const SliceAttentionParams& params, Mode mode,
                          Rng& rng);

/// Returns the refined features and the gates that produced them.
std::pair<Tensor, AttentionRecord> csam_forward(const Tensor& features, const CsamParams& params,
                                                Mode mode, Rng& rng);

/// Closed-form weight count of one module.
std::size_t csam_param_count(std::size_t slices, std::size_t channels, std::size_t rank,
                             std::size_t kernel, std::size_t reduction,
                             std::size_t slice_reduction);

}  // namespace csam
