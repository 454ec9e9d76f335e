#include "csam/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace csam {

namespace {

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

// For each element of `out` (row-major), the flat index of the element of
// `in` it reads from under broadcasting (or, for reductions, writes to).
std::vector<std::size_t> broadcast_map(const Shape& out, const Shape& in) {
  const auto in_strides = strides_of(in);
  std::vector<std::size_t> eff(out.size());
  for (std::size_t a = 0; a < out.size(); ++a) eff[a] = in[a] == 1 ? 0 : in_strides[a];

  const std::size_t n = numel(out);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(out.size(), 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map[i] = offset;
    for (std::size_t a = out.size(); a-- > 0;) {
      if (++idx[a] < out[a]) {
        offset += eff[a];
        break;
      }
      offset -= eff[a] * (out[a] - 1);
      idx[a] = 0;
    }
  }
  return map;
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(op) + " expects rank " + std::to_string(rank) + ", got " +
                     to_string(x.shape()));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* name, const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  std::transform(in.begin(), in.end(), out.begin(), fwd);
  return record_op(name, x.shape(), std::move(out), {x},
                   [x, deriv](std::span<const double> g, std::span<const std::span<double>> gin) {
                     const auto xv = x.data();
                     auto gx = gin[0];
                     for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i]);
                   });
}

double logistic(double v) {
  // Split by sign so exp never overflows.
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

Shape reduced_shape(const Shape& in, const std::vector<bool>& reduce, bool keepdims) {
  Shape out;
  for (std::size_t a = 0; a < in.size(); ++a) {
    if (!reduce[a]) {
      out.push_back(in[a]);
    } else if (keepdims) {
      out.push_back(1);
    }
  }
  if (out.empty()) out.push_back(1);
  return out;
}

struct ReductionPlan {
  Shape out_shape;
  Shape kept_shape;  // keepdims form, same rank as input
  std::vector<std::size_t> map;  // input element -> output element
};

ReductionPlan plan_reduction(const Tensor& x, const Axes& axes, bool keepdims, const char* op) {
  std::vector<bool> reduce(x.rank(), false);
  if (axes.empty()) throw ShapeError(std::string(op) + ": empty axis set");
  for (auto a : axes) {
    if (a >= x.rank()) throw ShapeError(std::string(op) + ": axis out of range");
    reduce[a] = true;
  }
  ReductionPlan plan;
  plan.kept_shape = reduced_shape(x.shape(), reduce, true);
  plan.out_shape = reduced_shape(x.shape(), reduce, keepdims);
  plan.map = broadcast_map(x.shape(), plan.kept_shape);
  return plan;
}

}  // namespace

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, logistic, [](double v) {
    const double s = logistic(v);
    return s * (1.0 - s);
  });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  if (detail::branch_trace_enabled()) {
    for (double v : x.data()) detail::trace_branch(v > 0 ? 1 : 2);
  }
  return unary(
      "leaky_relu", x, [slope](double v) { return v > 0 ? v : slope * v; },
      [slope](double v) { return v > 0 ? 1.0 : slope; });
}

Tensor relu(const Tensor& x) { return leaky_relu(x, 0.0); }

Tensor softplus(const Tensor& x) {
  return unary(
      "softplus", x,
      [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); }, logistic);
}

Tensor sqrt(const Tensor& x) {
  for (double v : x.data()) {
    if (v <= 0) throw std::domain_error("sqrt: input must be strictly positive");
  }
  return unary(
      "sqrt", x, [](double v) { return std::sqrt(v); },
      [](double v) { return 0.5 / std::sqrt(v); });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; }, [factor](double) { return factor; });
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (a.size() != b.size()) {
    throw ShapeError("broadcast requires equal ranks: " + to_string(a) + " vs " + to_string(b));
  }
  Shape out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i] && a[i] != 1 && b[i] != 1) {
      throw ShapeError("incompatible shapes " + to_string(a) + " and " + to_string(b));
    }
    out[i] = std::max(a[i], b[i]);
  }
  return out;
}

namespace {

enum class BinaryKind { kAdd, kSub, kMul };

Tensor binary(const char* name, BinaryKind kind, const Tensor& a, const Tensor& b) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  auto map_a = std::make_shared<std::vector<std::size_t>>(broadcast_map(out_shape, a.shape()));
  auto map_b = std::make_shared<std::vector<std::size_t>>(broadcast_map(out_shape, b.shape()));
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(map_a->size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = av[(*map_a)[i]];
    const double y = bv[(*map_b)[i]];
    switch (kind) {
      case BinaryKind::kAdd: out[i] = x + y; break;
      case BinaryKind::kSub: out[i] = x - y; break;
      case BinaryKind::kMul: out[i] = x * y; break;
    }
  }
  return record_op(name, std::move(out_shape), std::move(out), {a, b},
                   [a, b, kind, map_a, map_b](std::span<const double> g,
                                              std::span<const std::span<double>> gin) {
                     auto ga = gin[0];
                     auto gb = gin[1];
                     const auto av = a.data();
                     const auto bv = b.data();
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       const auto ia = (*map_a)[i];
                       const auto ib = (*map_b)[i];
                       switch (kind) {
                         case BinaryKind::kAdd:
                           if (!ga.empty()) ga[ia] += g[i];
                           if (!gb.empty()) gb[ib] += g[i];
                           break;
                         case BinaryKind::kSub:
                           if (!ga.empty()) ga[ia] += g[i];
                           if (!gb.empty()) gb[ib] -= g[i];
                           break;
                         case BinaryKind::kMul:
                           if (!ga.empty()) ga[ia] += g[i] * bv[ib];
                           if (!gb.empty()) gb[ib] += g[i] * av[ia];
                           break;
                       }
                     }
                   });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary("add", BinaryKind::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary("sub", BinaryKind::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary("mul", BinaryKind::kMul, a, b); }

Tensor reduce_max(const Tensor& x, const Axes& axes, bool keepdims) {
  auto plan = plan_reduction(x, axes, keepdims, "reduce_max");
  const auto xv = x.data();
  const std::size_t n_out = numel(plan.kept_shape);
  std::vector<double> out(n_out, 0.0);
  auto argmax = std::make_shared<std::vector<std::size_t>>(n_out, SIZE_MAX);
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const auto o = plan.map[i];
    // Strict comparison keeps the first maximum in row-major order.
    if ((*argmax)[o] == SIZE_MAX || xv[i] > out[o]) {
      out[o] = xv[i];
      (*argmax)[o] = i;
    }
  }
  if (detail::branch_trace_enabled()) {
    for (std::size_t a : *argmax) detail::trace_branch(a);
  }
  return record_op("reduce_max", std::move(plan.out_shape), std::move(out), {x},
                   [argmax](std::span<const double> g, std::span<const std::span<double>> gin) {
                     for (std::size_t o = 0; o < g.size(); ++o) gin[0][(*argmax)[o]] += g[o];
                   });
}

Tensor reduce_sum(const Tensor& x, const Axes& axes, bool keepdims) {
  auto plan = plan_reduction(x, axes, keepdims, "reduce_sum");
  const auto xv = x.data();
  std::vector<double> out(numel(plan.kept_shape), 0.0);
  for (std::size_t i = 0; i < xv.size(); ++i) out[plan.map[i]] += xv[i];
  auto map = std::make_shared<std::vector<std::size_t>>(std::move(plan.map));
  return record_op("reduce_sum", std::move(plan.out_shape), std::move(out), {x},
                   [map](std::span<const double> g, std::span<const std::span<double>> gin) {
                     auto gx = gin[0];
                     for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[(*map)[i]];
                   });
}

Tensor reduce_mean(const Tensor& x, const Axes& axes, bool keepdims) {
  auto plan = plan_reduction(x, axes, keepdims, "reduce_mean");
  const auto xv = x.data();
  const std::size_t n_out = numel(plan.kept_shape);
  const double count = static_cast<double>(xv.size() / n_out);
  std::vector<double> out(n_out, 0.0);
  for (std::size_t i = 0; i < xv.size(); ++i) out[plan.map[i]] += xv[i];
  for (double& v : out) v /= count;
  auto map = std::make_shared<std::vector<std::size_t>>(std::move(plan.map));
  return record_op("reduce_mean", std::move(plan.out_shape), std::move(out), {x},
                   [map, count](std::span<const double> g, std::span<const std::span<double>> gin) {
                     auto gx = gin[0];
                     for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[(*map)[i]] / count;
                   });
}

Tensor sum(const Tensor& x) {
  Axes all(x.rank());
  std::iota(all.begin(), all.end(), 0);
  return reshape(reduce_sum(x, all, true), {1});
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul inner dimension mismatch: " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  }
  return record_op("matmul", {m, n}, std::move(out), {a, b},
                   [a, b, m, k, n](std::span<const double> g,
                                   std::span<const std::span<double>> gin) {
                     const auto av = a.data();
                     const auto bv = b.data();
                     if (auto ga = gin[0]; !ga.empty()) {  // dA = dC * B^T
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t p = 0; p < k; ++p) {
                           double acc = 0.0;
                           for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
                           ga[i * k + p] += acc;
                         }
                     }
                     if (auto gb = gin[1]; !gb.empty()) {  // dB = A^T * dC
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t p = 0; p < k; ++p) {
                           const double aip = av[i * k + p];
                           for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
                         }
                     }
                   });
}

namespace {

struct ConvGeometry {
  std::size_t n, c_in, h, w, c_out, k, pad, oh, ow;
};

// Calls body(oy_begin, oy_end, ox_begin, ox_end, dy, dx) for every kernel
// tap, with output ranges clipped so the matching input index
// (o + tap - pad) stays in bounds.
template <typename Body>
void for_each_tap(const ConvGeometry& geo, Body&& body) {
  for (std::size_t ky = 0; ky < geo.k; ++ky) {
    const long dy = static_cast<long>(ky) - static_cast<long>(geo.pad);
    const long oy0 = std::max(0L, -dy);
    const long oy1 = std::min(static_cast<long>(geo.oh), static_cast<long>(geo.h) - dy);
    if (oy0 >= oy1) continue;
    for (std::size_t kx = 0; kx < geo.k; ++kx) {
      const long dx = static_cast<long>(kx) - static_cast<long>(geo.pad);
      const long ox0 = std::max(0L, -dx);
      const long ox1 = std::min(static_cast<long>(geo.ow), static_cast<long>(geo.w) - dx);
      if (ox0 >= ox1) continue;
      body(ky, kx, oy0, oy1, ox0, ox1, dy, dx);
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t padding) {
  require_rank(x, 4, "conv2d");
  require_rank(kernel, 4, "conv2d kernel");
  const std::size_t k = kernel.dim(2);
  if (kernel.dim(3) != k) throw ShapeError("conv2d: kernel must be square");
  if (k % 2 == 0) throw ShapeError("conv2d: kernel size must be odd, got " + std::to_string(k));
  if (kernel.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d channel mismatch: input " + to_string(x.shape()) + ", kernel " +
                     to_string(kernel.shape()));
  }
  ConvGeometry geo{x.dim(0), x.dim(1), x.dim(2), x.dim(3), kernel.dim(0), k, padding, 0, 0};
  if (geo.h + 2 * padding < k || geo.w + 2 * padding < k) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  geo.oh = geo.h + 2 * padding - k + 1;
  geo.ow = geo.w + 2 * padding - k + 1;

  const auto xv = x.data();
  const auto kv = kernel.data();
  const std::size_t in_plane = geo.h * geo.w;
  const std::size_t out_plane = geo.oh * geo.ow;
  std::vector<double> out(geo.n * geo.c_out * out_plane, 0.0);

  for (std::size_t b = 0; b < geo.n; ++b) {
    for (std::size_t co = 0; co < geo.c_out; ++co) {
      double* dst = out.data() + (b * geo.c_out + co) * out_plane;
      for (std::size_t ci = 0; ci < geo.c_in; ++ci) {
        const double* src = xv.data() + (b * geo.c_in + ci) * in_plane;
        const double* wk = kv.data() + (co * geo.c_in + ci) * k * k;
        for_each_tap(geo, [&](std::size_t ky, std::size_t kx, long oy0, long oy1, long ox0,
                              long ox1, long dy, long dx) {
          const double wv = wk[ky * k + kx];
          for (long oy = oy0; oy < oy1; ++oy) {
            double* drow = dst + oy * geo.ow;
            const double* srow = src + (oy + dy) * static_cast<long>(geo.w) + dx;
            for (long ox = ox0; ox < ox1; ++ox) drow[ox] += wv * srow[ox];
          }
        });
      }
    }
  }

  Shape out_shape{geo.n, geo.c_out, geo.oh, geo.ow};
  return record_op(
      "conv2d", std::move(out_shape), std::move(out), {x, kernel},
      [x, kernel, geo](std::span<const double> g, std::span<const std::span<double>> gin) {
        const auto xv = x.data();
        const auto kv = kernel.data();
        auto gx = gin[0];
        auto gk = gin[1];
        const std::size_t in_plane = geo.h * geo.w;
        const std::size_t out_plane = geo.oh * geo.ow;
        const std::size_t k = geo.k;
        for (std::size_t b = 0; b < geo.n; ++b) {
          for (std::size_t co = 0; co < geo.c_out; ++co) {
            const double* gout = g.data() + (b * geo.c_out + co) * out_plane;
            for (std::size_t ci = 0; ci < geo.c_in; ++ci) {
              const std::size_t in_off = (b * geo.c_in + ci) * in_plane;
              const std::size_t k_off = (co * geo.c_in + ci) * k * k;
              for_each_tap(geo, [&](std::size_t ky, std::size_t kx, long oy0, long oy1, long ox0,
                                    long ox1, long dy, long dx) {
                const long shift = dy * static_cast<long>(geo.w) + dx;
                if (!gx.empty()) {
                  const double wv = kv[k_off + ky * k + kx];
                  for (long oy = oy0; oy < oy1; ++oy) {
                    const double* grow = gout + oy * geo.ow;
                    double* xrow = gx.data() + in_off + oy * static_cast<long>(geo.w) + shift;
                    for (long ox = ox0; ox < ox1; ++ox) xrow[ox] += wv * grow[ox];
                  }
                }
                if (!gk.empty()) {
                  double acc = 0.0;
                  for (long oy = oy0; oy < oy1; ++oy) {
                    const double* grow = gout + oy * geo.ow;
                    const double* xrow = xv.data() + in_off + oy * static_cast<long>(geo.w) + shift;
                    for (long ox = ox0; ox < ox1; ++ox) acc += grow[ox] * xrow[ox];
                  }
                  gk[k_off + ky * k + kx] += acc;
                }
              });
            }
          }
        }
      });
}

Tensor conv2d_same(const Tensor& x, const Tensor& kernel) {
  require_rank(kernel, 4, "conv2d kernel");
  return conv2d(x, kernel, (kernel.dim(2) - 1) / 2);
}

Tensor concat(const std::vector<Tensor>& inputs, std::size_t axis) {
  if (inputs.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = inputs.front().shape();
  if (axis >= first.size()) throw ShapeError("concat axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& t : inputs) {
    const Shape& s = t.shape();
    if (s.size() != first.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t a = 0; a < s.size(); ++a) {
      if (a != axis && s[a] != first[a]) {
        throw ShapeError("concat extent mismatch: " + to_string(first) + " vs " + to_string(s));
      }
    }
    out_shape[axis] += s[axis];
  }
  // Treat each tensor as (outer, extent * inner) row blocks.
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= first[a];
  for (std::size_t a = axis + 1; a < first.size(); ++a) inner *= first[a];
  const std::size_t out_row = out_shape[axis] * inner;

  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& t : inputs) {
    offsets.push_back(offset);
    const std::size_t row = t.dim(axis) * inner;
    const auto tv = t.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(tv.begin() + o * row, row, out.begin() + o * out_row + offset);
    }
    offset += row;
  }
  std::vector<std::size_t> rows;
  for (const auto& t : inputs) rows.push_back(t.dim(axis) * inner);
  return record_op("concat", std::move(out_shape), std::move(out), inputs,
                   [offsets, rows, outer, out_row](std::span<const double> g,
                                                   std::span<const std::span<double>> gin) {
                     for (std::size_t t = 0; t < gin.size(); ++t) {
                       if (gin[t].empty()) continue;
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t j = 0; j < rows[t]; ++j)
                           gin[t][o * rows[t] + j] += g[o * out_row + offsets[t] + j];
                     }
                   });
}

Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
  require_rank(x, 4, "upsample_nearest");
  if (factor == 0) throw ShapeError("upsample factor must be positive");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h * factor, ow = w * factor;
  const auto xv = x.data();
  std::vector<double> out(planes * oh * ow);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx)
        out[(p * oh + y) * ow + xx] = xv[(p * h + y / factor) * w + xx / factor];
  return record_op("upsample_nearest", {x.dim(0), x.dim(1), oh, ow}, std::move(out), {x},
                   [planes, h, w, oh, ow, factor](std::span<const double> g,
                                                  std::span<const std::span<double>> gin) {
                     for (std::size_t p = 0; p < planes; ++p)
                       for (std::size_t y = 0; y < oh; ++y)
                         for (std::size_t xx = 0; xx < ow; ++xx)
                           gin[0][(p * h + y / factor) * w + xx / factor] +=
                               g[(p * oh + y) * ow + xx];
                   });
}

Tensor max_pool2d(const Tensor& x, std::size_t window) {
  require_rank(x, 4, "max_pool2d");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (window == 0 || h % window != 0 || w % window != 0) {
    throw ShapeError("max_pool2d: spatial size " + to_string(x.shape()) +
                     " not divisible by window " + std::to_string(window));
  }
  const std::size_t oh = h / window, ow = w / window;
  const auto xv = x.data();
  std::vector<double> out(planes * oh * ow);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        std::size_t best = (p * h + y * window) * w + xx * window;
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t i = (p * h + y * window + dy) * w + xx * window + dx;
            if (xv[i] > xv[best]) best = i;
          }
        const std::size_t o = (p * oh + y) * ow + xx;
        out[o] = xv[best];
        (*argmax)[o] = best;
      }
  if (detail::branch_trace_enabled()) {
    for (std::size_t a : *argmax) detail::trace_branch(a);
  }
  return record_op("max_pool2d", {x.dim(0), x.dim(1), oh, ow}, std::move(out), {x},
                   [argmax](std::span<const double> g, std::span<const std::span<double>> gin) {
                     for (std::size_t o = 0; o < g.size(); ++o) gin[0][(*argmax)[o]] += g[o];
                   });
}

namespace {

// Generic strided copy of a box [lo, lo + extent) of `src` into `dst` at
// `dst_lo`. Used by crop and pad in both directions.
void copy_box(std::span<const double> src, const Shape& src_shape, const Shape& src_lo,
              std::span<double> dst, const Shape& dst_shape, const Shape& dst_lo,
              const Shape& extent, bool accumulate) {
  const auto ss = strides_of(src_shape);
  const auto ds = strides_of(dst_shape);
  const std::size_t n = numel(extent);
  std::vector<std::size_t> idx(extent.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t so = 0, d = 0;
    for (std::size_t a = 0; a < extent.size(); ++a) {
      so += (src_lo[a] + idx[a]) * ss[a];
      d += (dst_lo[a] + idx[a]) * ds[a];
    }
    if (accumulate) {
      dst[d] += src[so];
    } else {
      dst[d] = src[so];
    }
    for (std::size_t a = extent.size(); a-- > 0;) {
      if (++idx[a] < extent[a]) break;
      idx[a] = 0;
    }
  }
}

}  // namespace

Tensor crop_center(const Tensor& x, const Shape& target) {
  const Shape& src = x.shape();
  if (target.size() != src.size()) throw ShapeError("crop_center: rank mismatch");
  Shape lo(src.size());
  for (std::size_t a = 0; a < src.size(); ++a) {
    if (target[a] > src[a] || target[a] == 0) {
      throw ShapeError("crop_center: target " + to_string(target) + " exceeds source " +
                       to_string(src));
    }
    lo[a] = (src[a] - target[a] + 1) / 2;
  }
  std::vector<double> out(numel(target));
  const Shape zero(src.size(), 0);
  copy_box(x.data(), src, lo, out, target, zero, target, false);
  return record_op("crop_center", target, std::move(out), {x},
                   [src, lo, target, zero](std::span<const double> g,
                                           std::span<const std::span<double>> gin) {
                     copy_box(g, target, zero, gin[0], src, lo, target, true);
                   });
}

Tensor pad_slices(const Tensor& x, std::size_t target_l) {
  if (x.rank() == 0) throw ShapeError("pad_slices on rank-0 tensor");
  if (target_l == 0) throw ShapeError("pad_slices: target must be positive");
  const Shape& src = x.shape();
  const std::size_t l = src[0];
  Shape out_shape = src;
  out_shape[0] = target_l;
  Shape src_lo(src.size(), 0), dst_lo(src.size(), 0), extent = src;
  if (target_l >= l) {
    dst_lo[0] = (target_l - l) / 2;
  } else {
    src_lo[0] = (l - target_l + 1) / 2;
    extent[0] = target_l;
  }
  std::vector<double> out(numel(out_shape), 0.0);
  copy_box(x.data(), src, src_lo, out, out_shape, dst_lo, extent, false);
  return record_op("pad_slices", out_shape, std::move(out), {x},
                   [src, src_lo, dst_lo, extent, out_shape](
                       std::span<const double> g, std::span<const std::span<double>> gin) {
                     copy_box(g, out_shape, dst_lo, gin[0], src, src_lo, extent, true);
                   });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  const auto xv = x.data();
  return record_op("reshape", std::move(shape), std::vector<double>(xv.begin(), xv.end()), {x},
                   [](std::span<const double> g, std::span<const std::span<double>> gin) {
                     for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                   });
}

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(x, 4, "instance_norm");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (gamma.numel() != c || beta.numel() != c) {
    throw ShapeError("instance_norm: affine parameters must have " + std::to_string(c) +
                     " entries");
  }
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  std::vector<double> out(xv.size());
  // Cached normalized values and inverse std per plane for backward.
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(n * c);
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = xv.data() + p * plane;
    double mean = 0.0;
    for (std::size_t i = 0; i < plane; ++i) mean += src[i];
    mean /= static_cast<double>(plane);
    double var = 0.0;
    for (std::size_t i = 0; i < plane; ++i) var += (src[i] - mean) * (src[i] - mean);
    var /= static_cast<double>(plane);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[p] = is;
    const std::size_t ch = p % c;
    for (std::size_t i = 0; i < plane; ++i) {
      const double xh = (src[i] - mean) * is;
      (*xhat)[p * plane + i] = xh;
      out[p * plane + i] = gv[ch] * xh + bv[ch];
    }
  }
  return record_op(
      "instance_norm", x.shape(), std::move(out), {x, gamma, beta},
      [gamma, xhat, inv_std, n, c, plane](std::span<const double> g,
                                          std::span<const std::span<double>> gin) {
        const auto gv = gamma.data();
        const double count = static_cast<double>(plane);
        for (std::size_t p = 0; p < n * c; ++p) {
          const std::size_t ch = p % c;
          const double* gp = g.data() + p * plane;
          const double* xh = xhat->data() + p * plane;
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t i = 0; i < plane; ++i) {
            sum_g += gp[i];
            sum_gx += gp[i] * xh[i];
          }
          if (!gin[1].empty()) gin[1][ch] += sum_gx;
          if (!gin[2].empty()) gin[2][ch] += sum_g;
          if (!gin[0].empty()) {
            const double k = gv[ch] * (*inv_std)[p] / count;
            double* gx = gin[0].data() + p * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              gx[i] += k * (count * gp[i] - sum_g - xh[i] * sum_gx);
            }
          }
        }
      });
}

}  // namespace csam
