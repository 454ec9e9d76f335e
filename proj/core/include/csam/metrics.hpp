#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace csam {

/// 2|P n G| / (|P| + |G|) over the whole volume; 1 when both are empty.
double dsc_3d(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt,
              std::int32_t class_id);

/// 100 * ||P| - |G|| / |G|; empty when the ground truth has no voxels of
/// the class.
std::optional<double> ravd(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt,
                           std::int32_t class_id);

/// Rank AUC of scores for positive (1) vs negative (0) labels; ties count
/// one half. Throws when either class is absent.
double patient_auc(std::span<const double> scores, std::span<const std::int32_t> labels);

struct MannWhitneyResult {
  double u_a = 0.0;  // pairs (a, b) with a > b, ties counted one half
  double u_b = 0.0;
  double u = 0.0;    // min(u_a, u_b)
  double z = 0.0;
  double p_value = 1.0;  // two-sided, normal approximation
};

/// Midranks for ties; tie-corrected variance and continuity correction.
MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b);

/// Linear interpolation between order statistics at h = (n - 1) q.
double quantile(std::vector<double> values, double q);
std::array<double, 3> quartiles(std::vector<double> values);

/// Empty when fewer than two points or either side has zero variance.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

struct UncertaintySummary {
  std::optional<std::array<double, 3>> correct_quartiles;
  std::optional<std::array<double, 3>> incorrect_quartiles;
  std::optional<double> pearson_r;  // bin-mean uncertainty vs bin error rate
  std::size_t correct_count = 0;
  std::size_t incorrect_count = 0;
  std::vector<double> bin_uncertainty;
  std::vector<double> bin_error_rate;
};

/// Splits pixels into correct/incorrect groups and correlates uncertainty
/// with error rate over `bins` equal-population bins sorted by uncertainty.
UncertaintySummary summarize_uncertainty(std::span<const double> uncertainty,
                                         const std::vector<bool>& correct, std::size_t bins);

struct MetricsReport {
  std::vector<std::int32_t> classes;            // foreground class ids
  std::vector<double> dsc;                      // mean per class
  std::vector<std::optional<double>> ravd;      // mean per class
  std::optional<double> auc;
  std::size_t volumes = 0;
  std::optional<UncertaintySummary> uncertainty;

  double mean_dsc() const;
  /// key = value text, same family as the run config.
  std::string to_text() const;
  /// class,dsc,ravd rows.
  std::string to_csv() const;
};

}  // namespace csam
