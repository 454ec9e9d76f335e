#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "csam/metrics.hpp"
#include "csam/network.hpp"
#include "csam/volume.hpp"

namespace csam {

struct EvalConfig {
  std::size_t mc_samples = 20;
  std::size_t bins = 20;
  bool uncertainty = true;

  void validate() const;
};

/// Per-voxel standard deviation (population form) of the true-class
/// probability over `samples` train-mode forwards, (l, h, w) order.
std::vector<double> mc_uncertainty(const SegmentationNet& net, const Volume& volume,
                                   std::size_t samples, Rng& rng);

/// MC uncertainty against eval-mode correctness, pooled over the dataset.
UncertaintySummary uncertainty_error_report(const SegmentationNet& net,
                                            const std::vector<Volume>& dataset,
                                            std::size_t samples, std::size_t bins, Rng& rng);

/// Eval-mode segmentation metrics over labelled volumes: per-class mean DSC
/// and RAVD, patient AUC on the last class when both groups occur, and the
/// uncertainty analysis when enabled.
MetricsReport evaluate(const SegmentationNet& net, const std::vector<Volume>& dataset,
                       const EvalConfig& cfg, std::uint64_t seed);

}  // namespace csam
