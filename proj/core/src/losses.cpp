#include "csam/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace csam {

namespace {

struct Layout {
  std::size_t slices, classes, plane, voxels;

  std::size_t at(std::size_t voxel, std::size_t k) const {
    const std::size_t s = voxel / plane;
    return (s * classes + k) * plane + voxel % plane;
  }
};

Layout check_inputs(const Tensor& logits, std::span<const std::int32_t> labels, const char* op) {
  if (logits.rank() != 4) throw ShapeError(std::string(op) + " expects (l, K, h, w) logits");
  Layout lay{logits.dim(0), logits.dim(1), logits.dim(2) * logits.dim(3), 0};
  lay.voxels = lay.slices * lay.plane;
  if (labels.size() != lay.voxels) {
    throw ShapeError(std::string(op) + ": label count " + std::to_string(labels.size()) +
                     " does not match " + std::to_string(lay.voxels) + " voxels");
  }
  for (auto y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= lay.classes) {
      throw std::out_of_range(std::string(op) + ": label " + std::to_string(y) +
                              " outside 0.." + std::to_string(lay.classes - 1));
    }
  }
  return lay;
}

// log softmax for every voxel/class, logits layout.
std::vector<double> log_softmax(const Tensor& logits, const Layout& lay) {
  const auto z = logits.data();
  std::vector<double> out(z.size());
  for (std::size_t v = 0; v < lay.voxels; ++v) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < lay.classes; ++k) m = std::max(m, z[lay.at(v, k)]);
    double s = 0.0;
    for (std::size_t k = 0; k < lay.classes; ++k) s += std::exp(z[lay.at(v, k)] - m);
    const double lse = m + std::log(s);
    for (std::size_t k = 0; k < lay.classes; ++k) out[lay.at(v, k)] = z[lay.at(v, k)] - lse;
  }
  return out;
}

std::vector<std::int32_t> copy_labels(std::span<const std::int32_t> labels) {
  return {labels.begin(), labels.end()};
}

}  // namespace

LossKind parse_loss_kind(std::string_view name) {
  if (name == "cross_entropy") return LossKind::kCrossEntropy;
  if (name == "dice") return LossKind::kDice;
  if (name == "focal") return LossKind::kFocal;
  throw std::invalid_argument("unknown loss '" + std::string(name) +
                              "' (expected cross_entropy, dice or focal)");
}

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kCrossEntropy: return "cross_entropy";
    case LossKind::kDice: return "dice";
    case LossKind::kFocal: return "focal";
  }
  return "?";
}

std::vector<double> softmax_probabilities(const Tensor& logits) {
  if (logits.rank() != 4) throw ShapeError("softmax expects (l, K, h, w) logits");
  const Layout lay{logits.dim(0), logits.dim(1), logits.dim(2) * logits.dim(3),
                   logits.dim(0) * logits.dim(2) * logits.dim(3)};
  auto p = log_softmax(logits, lay);
  for (double& v : p) v = std::exp(v);
  return p;
}

std::vector<std::int32_t> argmax_labels(const Tensor& logits) {
  if (logits.rank() != 4) throw ShapeError("argmax expects (l, K, h, w) logits");
  const Layout lay{logits.dim(0), logits.dim(1), logits.dim(2) * logits.dim(3),
                   logits.dim(0) * logits.dim(2) * logits.dim(3)};
  const auto z = logits.data();
  std::vector<std::int32_t> out(lay.voxels);
  for (std::size_t v = 0; v < lay.voxels; ++v) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < lay.classes; ++k) {
      if (z[lay.at(v, k)] > z[lay.at(v, best)]) best = k;
    }
    out[v] = static_cast<std::int32_t>(best);
  }
  return out;
}

Tensor cross_entropy_loss(const Tensor& logits, std::span<const std::int32_t> labels) {
  const Layout lay = check_inputs(logits, labels, "cross_entropy_loss");
  const auto logp = log_softmax(logits, lay);
  double total = 0.0;
  for (std::size_t v = 0; v < lay.voxels; ++v) total -= logp[lay.at(v, labels[v])];
  const double n = static_cast<double>(lay.voxels);
  return record_op("cross_entropy", {1}, {total / n}, {logits},
                   [lay, logits, y = copy_labels(labels), n](
                       std::span<const double> g, std::span<const std::span<double>> gin) {
                     const auto logp = log_softmax(logits, lay);
                     const double scale = g[0] / n;
                     for (std::size_t v = 0; v < lay.voxels; ++v)
                       for (std::size_t k = 0; k < lay.classes; ++k) {
                         const std::size_t i = lay.at(v, k);
                         const double target = static_cast<std::int32_t>(k) == y[v] ? 1.0 : 0.0;
                         gin[0][i] += scale * (std::exp(logp[i]) - target);
                       }
                   });
}

Tensor soft_dice_loss(const Tensor& logits, std::span<const std::int32_t> labels, double smooth) {
  const Layout lay = check_inputs(logits, labels, "soft_dice_loss");
  if (lay.classes < 2) throw ShapeError("soft_dice_loss needs at least one foreground class");
  auto p = log_softmax(logits, lay);
  for (double& v : p) v = std::exp(v);
  const std::size_t fg = lay.classes - 1;
  // Per foreground class: intersection and sum p + sum g.
  std::vector<double> inter(lay.classes, 0.0), denom(lay.classes, 0.0);
  for (std::size_t v = 0; v < lay.voxels; ++v)
    for (std::size_t k = 1; k < lay.classes; ++k) {
      const double gk = labels[v] == static_cast<std::int32_t>(k) ? 1.0 : 0.0;
      inter[k] += p[lay.at(v, k)] * gk;
      denom[k] += p[lay.at(v, k)] + gk;
    }
  double mean_dice = 0.0;
  for (std::size_t k = 1; k < lay.classes; ++k) {
    mean_dice += (2.0 * inter[k] + smooth) / (denom[k] + smooth);
  }
  mean_dice /= static_cast<double>(fg);
  return record_op(
      "soft_dice", {1}, {1.0 - mean_dice}, {logits},
      [lay, p = std::move(p), inter, denom, smooth, fg, y = copy_labels(labels)](
          std::span<const double> g, std::span<const std::span<double>> gin) {
        std::vector<double> dl_dp(lay.classes, 0.0);
        for (std::size_t v = 0; v < lay.voxels; ++v) {
          double dot = 0.0;
          for (std::size_t k = 1; k < lay.classes; ++k) {
            const double gk = y[v] == static_cast<std::int32_t>(k) ? 1.0 : 0.0;
            const double s = denom[k] + smooth;
            dl_dp[k] = -(2.0 * gk * s - (2.0 * inter[k] + smooth)) / (s * s * static_cast<double>(fg));
            dot += p[lay.at(v, k)] * dl_dp[k];
          }
          for (std::size_t k = 0; k < lay.classes; ++k) {
            const std::size_t i = lay.at(v, k);
            gin[0][i] += g[0] * p[i] * (dl_dp[k] - dot);
          }
        }
      });
}

Tensor focal_loss(const Tensor& logits, std::span<const std::int32_t> labels, double gamma,
                  double alpha) {
  const Layout lay = check_inputs(logits, labels, "focal_loss");
  if (gamma < 0) throw std::invalid_argument("focal_loss: gamma must be non-negative");
  const auto logp = log_softmax(logits, lay);
  double total = 0.0;
  for (std::size_t v = 0; v < lay.voxels; ++v) {
    const double lp = logp[lay.at(v, labels[v])];
    const double q = -std::expm1(lp);  // 1 - p_t
    total += -alpha * std::pow(q, gamma) * lp;
  }
  const double n = static_cast<double>(lay.voxels);
  return record_op(
      "focal", {1}, {total / n}, {logits},
      [lay, logp, gamma, alpha, n, y = copy_labels(labels)](
          std::span<const double> g, std::span<const std::span<double>> gin) {
        for (std::size_t v = 0; v < lay.voxels; ++v) {
          const double lp = logp[lay.at(v, y[v])];
          const double pt = std::exp(lp);
          const double q = -std::expm1(lp);
          // d term / d p_t; the gamma * q^(gamma-1) part vanishes for gamma == 0.
          double dt_dp = -alpha * std::pow(q, gamma) / pt;
          if (gamma != 0.0 && q > 0.0) dt_dp += alpha * gamma * std::pow(q, gamma - 1.0) * lp;
          const double scale = g[0] * dt_dp * pt / n;
          for (std::size_t k = 0; k < lay.classes; ++k) {
            const std::size_t i = lay.at(v, k);
            const double delta = static_cast<std::int32_t>(k) == y[v] ? 1.0 : 0.0;
            gin[0][i] += scale * (delta - std::exp(logp[i]));
          }
        }
      });
}

}  // namespace csam
