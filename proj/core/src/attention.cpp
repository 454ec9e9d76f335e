#include "csam/attention.hpp"

#include <algorithm>
#include <cmath>

#include "csam/ops.hpp"

namespace csam {

namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// Mean over the slice axis, (l, c, h, w) -> (1, c, h, w). Each position sums
// its l values in sorted order, so permuting slices leaves the result
// bit-identical.
Tensor slice_mean(const Tensor& x) {
  const std::size_t l = x.dim(0), plane = x.numel() / l;
  const auto in = x.data();
  std::vector<double> out(plane), column(l);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t s = 0; s < l; ++s) column[s] = in[s * plane + p];
    std::sort(column.begin(), column.end());
    double total = 0.0;
    for (double v : column) total += v;
    out[p] = total / static_cast<double>(l);
  }
  Shape shape = x.shape();
  shape[0] = 1;
  return record_op("slice_mean", std::move(shape), std::move(out), {x},
                   [l, plane](std::span<const double> g, std::span<const std::span<double>> gin) {
                     if (gin[0].empty()) return;
                     const double inv = 1.0 / static_cast<double>(l);
                     for (std::size_t s = 0; s < l; ++s)
                       for (std::size_t p = 0; p < plane; ++p) gin[0][s * plane + p] += g[p] * inv;
                   });
}

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = stddev * rng.normal();
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

// Two bias-free linear layers with a rectifier between them, applied to a
// column vector (n, 1).
Tensor shared_mlp(const Tensor& column, const Tensor& w1, const Tensor& w2) {
  return matmul(w2, relu(matmul(w1, column)));
}

}  // namespace

std::size_t CsamShape::channel_hidden() const {
  return std::max<std::size_t>(ceil_div(channels, reduction), 1);
}

std::size_t CsamShape::slice_hidden() const {
  return std::max<std::size_t>(ceil_div(slices, slice_reduction), 1);
}

void CsamShape::validate() const {
  if (slices == 0 || channels == 0 || rank == 0 || kernel == 0 || reduction == 0 ||
      slice_reduction == 0) {
    throw std::invalid_argument("attention hyperparameters must be positive");
  }
  if (rank > slices) throw std::invalid_argument("attention rank must not exceed slice count");
  if (kernel % 2 == 0) throw std::invalid_argument("positional kernel size must be odd");
}

SliceAttentionParams SliceAttentionParams::zeros(std::size_t slices, std::size_t rank,
                                                 std::size_t hidden) {
  return {Tensor::zeros({hidden, slices}, true), Tensor::zeros({slices, hidden}, true),
          Tensor::zeros({slices, slices}, true), Tensor::zeros({slices * rank, slices}, true),
          Tensor::zeros({slices, slices}, true)};
}

SliceAttentionParams SliceAttentionParams::random(std::size_t slices, std::size_t rank,
                                                  std::size_t hidden, Rng& rng) {
  const double inv_l = 1.0 / std::sqrt(static_cast<double>(slices));
  SliceAttentionParams p;
  p.mlp_w1 = normal_tensor({hidden, slices}, std::sqrt(2.0) * inv_l, rng);
  p.mlp_w2 = normal_tensor({slices, hidden}, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
  p.w_mu = normal_tensor({slices, slices}, inv_l, rng);
  p.w_p = normal_tensor({slices * rank, slices}, 0.5 * inv_l, rng);
  p.w_d = normal_tensor({slices, slices}, 0.5 * inv_l, rng);
  return p;
}

std::vector<NamedTensor> SliceAttentionParams::named(const std::string& prefix) {
  return {{prefix + "slice_mlp_w1", &mlp_w1},
          {prefix + "slice_mlp_w2", &mlp_w2},
          {prefix + "w_mu", &w_mu},
          {prefix + "w_p", &w_p},
          {prefix + "w_d", &w_d}};
}

std::size_t SliceAttentionParams::parameter_count() const {
  return mlp_w1.numel() + mlp_w2.numel() + w_mu.numel() + w_p.numel() + w_d.numel();
}

CsamParams CsamParams::zeros(const CsamShape& shape) {
  shape.validate();
  const std::size_t ch = shape.channel_hidden();
  return {Tensor::zeros({ch, shape.channels}, true), Tensor::zeros({shape.channels, ch}, true),
          Tensor::zeros({1, 2, shape.kernel, shape.kernel}, true),
          SliceAttentionParams::zeros(shape.slices, shape.rank, shape.slice_hidden())};
}

CsamParams CsamParams::random(const CsamShape& shape, Rng& rng) {
  shape.validate();
  const std::size_t c = shape.channels, ch = shape.channel_hidden(), k = shape.kernel;
  CsamParams p;
  p.mlp_w1 = normal_tensor({ch, c}, std::sqrt(2.0 / static_cast<double>(c)), rng);
  p.mlp_w2 = normal_tensor({c, ch}, 1.0 / std::sqrt(static_cast<double>(ch)), rng);
  p.pos_kernel = normal_tensor({1, 2, k, k}, 1.0 / std::sqrt(2.0 * k * k), rng);
  p.slice = SliceAttentionParams::random(shape.slices, shape.rank, shape.slice_hidden(), rng);
  return p;
}

std::vector<NamedTensor> CsamParams::named(const std::string& prefix) {
  std::vector<NamedTensor> out{{prefix + "mlp_w1", &mlp_w1},
                               {prefix + "mlp_w2", &mlp_w2},
                               {prefix + "pos_kernel", &pos_kernel}};
  for (auto& t : slice.named(prefix)) out.push_back(t);
  return out;
}

std::size_t CsamParams::parameter_count() const {
  return mlp_w1.numel() + mlp_w2.numel() + pos_kernel.numel() + slice.parameter_count();
}

std::vector<double> LowRankGaussian::covariance() const {
  const std::size_t l = slices(), r = rank();
  const auto p = p_factor.data();
  const auto d = d_diag.data();
  std::vector<double> sigma(l * l, 0.0);
  for (std::size_t i = 0; i < l; ++i) {
    for (std::size_t j = 0; j < l; ++j) {
      double acc = 0.0;
      for (std::size_t q = 0; q < r; ++q) acc += p[i * r + q] * p[j * r + q];
      sigma[i * l + j] = acc;
    }
    sigma[i * l + i] += d[i];
  }
  return sigma;
}

SliceNoise SliceNoise::draw(std::size_t slices, std::size_t rank, Rng& rng) {
  SliceNoise noise;
  noise.rank_noise = rng.normal_vector(rank);
  noise.diag_noise = rng.normal_vector(slices);
  return noise;
}

Tensor semantic_attention(const Tensor& features, const CsamParams& params) {
  if (features.rank() != 4) throw ShapeError("semantic attention expects (l, c, h, w)");
  const std::size_t c = features.dim(1);
  if (c != params.channels()) {
    throw ShapeError("semantic attention: feature channels " + std::to_string(c) +
                     " do not match module channels " + std::to_string(params.channels()));
  }
  const Tensor max_pooled = reshape(reduce_max(features, {0, 2, 3}), {c, 1});
  const Tensor avg_pooled = reshape(reduce_mean(slice_mean(features), {2, 3}), {c, 1});
  const Tensor logits = add(shared_mlp(max_pooled, params.mlp_w1, params.mlp_w2),
                            shared_mlp(avg_pooled, params.mlp_w1, params.mlp_w2));
  return reshape(sigmoid(logits), {1, c, 1, 1});
}

Tensor positional_attention(const Tensor& features, const CsamParams& params) {
  if (features.rank() != 4) throw ShapeError("positional attention expects (l, c, h, w)");
  const Tensor max_pooled = reduce_max(features, {0, 1});
  const Tensor avg_pooled = reduce_mean(slice_mean(features), {1});
  return sigmoid(conv2d_same(concat({max_pooled, avg_pooled}, 1), params.pos_kernel));
}

LowRankGaussian slice_gaussian(const Tensor& descriptor, const SliceAttentionParams& params) {
  const std::size_t l = params.slices(), r = params.rank();
  if (descriptor.shape() != Shape{l, 1}) {
    throw ShapeError("slice descriptor must be (" + std::to_string(l) + ",1), got " +
                     to_string(descriptor.shape()));
  }
  LowRankGaussian g;
  g.mu = matmul(params.w_mu, descriptor);
  g.p_factor = reshape(matmul(params.w_p, descriptor), {l, r});
  g.d_diag = add(softplus(matmul(params.w_d, descriptor)),
                 Tensor::full({l, 1}, kVarianceFloor));
  return g;
}

Tensor sample_slice(const LowRankGaussian& g, const SliceNoise& noise) {
  const std::size_t l = g.slices(), r = g.rank();
  if (noise.rank_noise.size() != r || noise.diag_noise.size() != l) {
    throw ShapeError("slice noise does not match the Gaussian's dimensions");
  }
  const Tensor e1 = Tensor::from_data({r, 1}, noise.rank_noise);
  const Tensor e2 = Tensor::from_data({l, 1}, noise.diag_noise);
  return add(add(g.mu, matmul(g.p_factor, e1)), mul(sqrt(g.d_diag), e2));
}

Tensor sample_slice(const LowRankGaussian& g, Mode mode, Rng& rng) {
  if (mode == Mode::kEval) return g.mu;
  return sample_slice(g, SliceNoise::draw(g.slices(), g.rank(), rng));
}

SliceGate slice_attention(const Tensor& features, const SliceAttentionParams& params, Mode mode,
                          Rng& rng) {
  if (features.rank() != 4) throw ShapeError("slice attention expects (l, c, h, w)");
  const std::size_t l = features.dim(0);
  if (l != params.slices()) {
    throw ShapeError("slice attention built for " + std::to_string(params.slices()) +
                     " slices, got " + std::to_string(l));
  }
  const Tensor max_pooled = reshape(reduce_max(features, {1, 2, 3}), {l, 1});
  const Tensor avg_pooled = reshape(reduce_mean(features, {1, 2, 3}), {l, 1});
  const Tensor descriptor = add(shared_mlp(max_pooled, params.mlp_w1, params.mlp_w2),
                                shared_mlp(avg_pooled, params.mlp_w1, params.mlp_w2));
  SliceGate out;
  out.gaussian = slice_gaussian(descriptor, params);
  out.z = sample_slice(out.gaussian, mode, rng);
  out.gate = reshape(sigmoid(out.z), {l, 1, 1, 1});
  return out;
}

std::pair<Tensor, AttentionRecord> csam_forward(const Tensor& features, const CsamParams& params,
                                                Mode mode, Rng& rng) {
  AttentionRecord rec;
  rec.m_semantic = semantic_attention(features, params);
  const Tensor f1 = mul(rec.m_semantic, features);
  rec.m_positional = positional_attention(f1, params);
  const Tensor f2 = mul(rec.m_positional, f1);
  SliceGate slice = slice_attention(f2, params.slice, mode, rng);
  rec.m_slice = slice.gate;
  rec.gaussian = std::move(slice.gaussian);
  rec.z = slice.z;
  Tensor refined = mul(rec.m_slice, f2);
  return {std::move(refined), std::move(rec)};
}

std::size_t csam_param_count(std::size_t slices, std::size_t channels, std::size_t rank,
                             std::size_t kernel, std::size_t reduction,
                             std::size_t slice_reduction) {
  const CsamShape s{slices, channels, rank, kernel, reduction, slice_reduction};
  s.validate();
  return 2 * channels * s.channel_hidden() + 2 * kernel * kernel + 2 * slices * s.slice_hidden() +
         (2 + rank) * slices * slices;
}

}  // namespace csam
