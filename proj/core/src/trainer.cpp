#include "csam/trainer.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace csam {

void TrainConfig::validate() const {
  if (!(adam.lr > 0)) throw std::invalid_argument("learning rate must be positive");
  if (!(adam.weight_decay >= 0)) throw std::invalid_argument("weight decay must be non-negative");
  if (!(focal_gamma >= 0)) throw std::invalid_argument("focal gamma must be non-negative");
  augment.validate();
}

Tensor compute_loss(const TrainConfig& cfg, const Tensor& logits,
                    std::span<const std::int32_t> labels) {
  switch (cfg.loss) {
    case LossKind::kCrossEntropy: return cross_entropy_loss(logits, labels);
    case LossKind::kDice: return soft_dice_loss(logits, labels);
    case LossKind::kFocal: return focal_loss(logits, labels, cfg.focal_gamma, cfg.focal_alpha);
  }
  throw std::logic_error("unhandled loss kind");
}

TrainResult fit(SegmentationNet& net, const std::vector<Volume>& dataset, const TrainConfig& cfg,
                const EpochCallback& on_epoch) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("fit: dataset is empty");
  const std::size_t l = net.config().backbone.slices;
  for (const auto& v : dataset) {
    if (v.slices != l) {
      throw ShapeError("fit: volume '" + v.id + "' has " + std::to_string(v.slices) +
                       " slices, network expects " + std::to_string(l));
    }
    if (!v.labels) throw std::invalid_argument("fit: volume '" + v.id + "' has no labels");
  }

  Rng order_rng = Rng::stream(cfg.seed, "train/shuffle");
  Rng augment_rng = Rng::stream(cfg.seed, "train/augment");
  Rng sampling_rng = Rng::stream(cfg.seed, "train/sampling");
  const auto params = net.parameters();
  OptimizerState state;
  TrainResult result;

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[order_rng.next_u64() % i]);
    }
    double total = 0.0;
    for (std::size_t idx : order) {
      const Volume sample = augment(dataset[idx], cfg.augment, augment_rng);
      double loss_value = 0.0;
      try {
        const auto out = net.forward(sample.to_tensor(), Mode::kTrain, sampling_rng);
        const Tensor loss = compute_loss(cfg, out.logits, *sample.labels);
        loss_value = loss.item();
        backward(loss);
      } catch (const NonFiniteError& e) {
        throw TrainingDiverged("non-finite value at epoch " + std::to_string(epoch + 1) +
                               ", volume '" + sample.id + "': " + e.what());
      }
      adam_step(params, state, cfg.adam);
      for (const auto& p : params) {
        for (double v : p.tensor->data()) {
          if (!std::isfinite(v)) {
            throw TrainingDiverged("parameter " + p.name + " became non-finite at epoch " +
                                   std::to_string(epoch + 1));
          }
        }
      }
      total += loss_value;
      ++result.steps;
    }
    result.epoch_loss.push_back(total / static_cast<double>(dataset.size()));
    if (on_epoch) on_epoch(epoch + 1, result.epoch_loss.back());
  }
  return result;
}

}  // namespace csam
