#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "csam/tensor.hpp"

// Segmentation losses over logits (l, K, h, w) and integer labels (l, h, w).
// Each returns a shape-(1) tensor; labels outside 0..K-1 throw
// std::out_of_range.

namespace csam {

enum class LossKind { kCrossEntropy, kDice, kFocal };

LossKind parse_loss_kind(std::string_view name);
std::string_view to_string(LossKind kind);

/// Mean over voxels of -log softmax(logits)[label], via log-sum-exp.
Tensor cross_entropy_loss(const Tensor& logits, std::span<const std::int32_t> labels);

/// 1 - mean over foreground classes of (2 sum p g + s) / (sum p + sum g + s).
Tensor soft_dice_loss(const Tensor& logits, std::span<const std::int32_t> labels,
                      double smooth = 1e-5);

/// Mean of -alpha (1 - p_t)^gamma log p_t.
Tensor focal_loss(const Tensor& logits, std::span<const std::int32_t> labels, double gamma = 2.0,
                  double alpha = 0.25);

/// Channel softmax of (l, K, h, w) logits, same layout, no graph.
std::vector<double> softmax_probabilities(const Tensor& logits);

/// Per-voxel argmax over the class axis, (l, h, w) order. Ties go to the
/// lower class index.
std::vector<std::int32_t> argmax_labels(const Tensor& logits);

}  // namespace csam
