#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "csam/augment.hpp"
#include "csam/losses.hpp"
#include "csam/network.hpp"
#include "csam/optimizer.hpp"
#include "csam/volume.hpp"

namespace csam {

struct TrainConfig {
  AdamConfig adam;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::kCrossEntropy;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  AugmentConfig augment;

  void validate() const;
};

/// NaN/Inf anywhere in a training step.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean loss per epoch
  std::size_t steps = 0;
};

Tensor compute_loss(const TrainConfig& cfg, const Tensor& logits,
                    std::span<const std::int32_t> labels);

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

/// One optimizer step per volume (the slice axis is the batch), volumes
/// visited in a seeded shuffled order each epoch. Deterministic in
/// (cfg.seed, data, initial weights).
TrainResult fit(SegmentationNet& net, const std::vector<Volume>& dataset, const TrainConfig& cfg,
                const EpochCallback& on_epoch = {});

}  // namespace csam
