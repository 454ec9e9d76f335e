#include "csam/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "csam/losses.hpp"

namespace csam {

namespace {

void check_volume(const SegmentationNet& net, const Volume& v) {
  const std::size_t l = net.config().backbone.slices;
  if (v.slices != l) {
    throw ShapeError("volume '" + v.id + "' has " + std::to_string(v.slices) +
                     " slices, network expects " + std::to_string(l));
  }
  if (!v.labels) throw std::invalid_argument("volume '" + v.id + "' has no labels");
}

}  // namespace

void EvalConfig::validate() const {
  if (uncertainty && mc_samples < 2) {
    throw std::invalid_argument("uncertainty analysis needs at least 2 samples");
  }
  if (bins == 0) throw std::invalid_argument("bins must be positive");
}

std::vector<double> mc_uncertainty(const SegmentationNet& net, const Volume& volume,
                                   std::size_t samples, Rng& rng) {
  if (samples < 2) throw std::invalid_argument("mc_uncertainty needs at least 2 samples");
  check_volume(net, volume);
  const std::size_t k = net.config().backbone.num_classes;
  const std::size_t hw = volume.height * volume.width;
  const auto& labels = *volume.labels;
  std::vector<double> sum(labels.size(), 0.0), sum_sq(labels.size(), 0.0);
  NoGradGuard no_grad;
  const Tensor x = volume.to_tensor();
  for (std::size_t m = 0; m < samples; ++m) {
    const auto probs = softmax_probabilities(net.forward(x, Mode::kTrain, rng).logits);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const std::size_t s = i / hw, pix = i % hw;
      const double p = probs[(s * k + static_cast<std::size_t>(labels[i])) * hw + pix];
      sum[i] += p;
      sum_sq[i] += p * p;
    }
  }
  const double n = static_cast<double>(samples);
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double mean = sum[i] / n;
    out[i] = std::sqrt(std::max(0.0, sum_sq[i] / n - mean * mean));
  }
  return out;
}

UncertaintySummary uncertainty_error_report(const SegmentationNet& net,
                                            const std::vector<Volume>& dataset,
                                            std::size_t samples, std::size_t bins, Rng& rng) {
  if (dataset.empty()) throw std::invalid_argument("uncertainty report needs data");
  std::vector<double> uncertainty;
  std::vector<bool> correct;
  for (const auto& v : dataset) {
    const auto u = mc_uncertainty(net, v, samples, rng);
    std::vector<std::int32_t> pred;
    {
      NoGradGuard no_grad;
      pred = argmax_labels(net.forward(v.to_tensor(), Mode::kEval, rng).logits);
    }
    uncertainty.insert(uncertainty.end(), u.begin(), u.end());
    for (std::size_t i = 0; i < pred.size(); ++i) correct.push_back(pred[i] == (*v.labels)[i]);
  }
  return summarize_uncertainty(uncertainty, correct, bins);
}

MetricsReport evaluate(const SegmentationNet& net, const std::vector<Volume>& dataset,
                       const EvalConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("evaluate needs data");
  const auto k = static_cast<std::int32_t>(net.config().backbone.num_classes);
  MetricsReport report;
  report.volumes = dataset.size();
  for (std::int32_t c = 1; c < k; ++c) report.classes.push_back(c);
  std::vector<double> dsc_sum(report.classes.size(), 0.0);
  std::vector<double> ravd_sum(report.classes.size(), 0.0);
  std::vector<std::size_t> ravd_n(report.classes.size(), 0);
  std::vector<double> scores;
  std::vector<std::int32_t> positive;

  Rng eval_rng = Rng::stream(seed, "eval/forward");
  for (const auto& v : dataset) {
    check_volume(net, v);
    std::vector<std::int32_t> pred;
    {
      NoGradGuard no_grad;
      pred = argmax_labels(net.forward(v.to_tensor(), Mode::kEval, eval_rng).logits);
    }
    const auto& gt = *v.labels;
    for (std::size_t i = 0; i < report.classes.size(); ++i) {
      dsc_sum[i] += dsc_3d(pred, gt, report.classes[i]);
      if (const auto r = ravd(pred, gt, report.classes[i])) {
        ravd_sum[i] += *r;
        ++ravd_n[i];
      }
    }
    const std::int32_t lesion = k - 1;
    scores.push_back(static_cast<double>(std::count(pred.begin(), pred.end(), lesion)));
    positive.push_back(std::count(gt.begin(), gt.end(), lesion) > 0 ? 1 : 0);
  }
  const double n = static_cast<double>(dataset.size());
  for (std::size_t i = 0; i < report.classes.size(); ++i) {
    report.dsc.push_back(dsc_sum[i] / n);
    report.ravd.push_back(ravd_n[i] ? std::optional<double>(ravd_sum[i] / static_cast<double>(ravd_n[i]))
                                    : std::nullopt);
  }
  const auto positives = std::count(positive.begin(), positive.end(), 1);
  if (positives > 0 && static_cast<std::size_t>(positives) < positive.size()) {
    report.auc = patient_auc(scores, positive);
  }
  if (cfg.uncertainty) {
    Rng mc_rng = Rng::stream(seed, "eval/sampling");
    report.uncertainty = uncertainty_error_report(net, dataset, cfg.mc_samples, cfg.bins, mc_rng);
  }
  return report;
}

}  // namespace csam
