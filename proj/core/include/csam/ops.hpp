#pragma once

#include <cstddef>
#include <vector>

#include "csam/tensor.hpp"

// Differentiable tensor operations. All 4-D tensors use the (l, c, h, w)
// axis order; l doubles as the batch axis for 2-D convolutions.

namespace csam {

using Axes = std::vector<std::size_t>;

// Elementwise unary.
Tensor sigmoid(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor relu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor scale(const Tensor& x, double factor);

// Elementwise binary with broadcasting: ranks must match and every axis
// pair must be equal or contain a 1.
Shape broadcast_shape(const Shape& a, const Shape& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// Reductions. The max gradient goes to the first maximal element in
// row-major order.
Tensor reduce_max(const Tensor& x, const Axes& axes, bool keepdims = true);
Tensor reduce_mean(const Tensor& x, const Axes& axes, bool keepdims = true);
Tensor reduce_sum(const Tensor& x, const Axes& axes, bool keepdims = true);
/// Sum of every element, returned with shape (1).
Tensor sum(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);

/// Cross-correlation of x (n, c_in, h, w) with kernel (c_out, c_in, k, k),
/// stride 1, zero padding on each side. k must be odd.
Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t padding);
/// conv2d with padding (k - 1) / 2, preserving the spatial size.
Tensor conv2d_same(const Tensor& x, const Tensor& kernel);

Tensor concat(const std::vector<Tensor>& inputs, std::size_t axis);
/// Repeats every (h, w) value `factor` times along both spatial axes.
Tensor upsample_nearest(const Tensor& x, std::size_t factor);
/// Non-overlapping window max over (h, w) with stride == window.
Tensor max_pool2d(const Tensor& x, std::size_t window);
/// Keeps the centered `target` extents. When the margin is odd the extra
/// element is dropped from the low end.
Tensor crop_center(const Tensor& x, const Shape& target);
/// Zero-pads or truncates axis 0 to `target_l`, splitting the difference
/// between both ends.
Tensor pad_slices(const Tensor& x, std::size_t target_l);
Tensor reshape(const Tensor& x, Shape shape);

/// Per-(n, c) plane normalization with per-channel affine (gamma, beta of
/// shape (c)). Biased variance.
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     double eps = 1e-5);

}  // namespace csam
