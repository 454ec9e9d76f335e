#include "csam/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace csam {

namespace {

void require_same_size(std::size_t a, std::size_t b, const char* op) {
  if (a != b) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

// Midranks (1-based) of `values`; also returns sum of (t^3 - t) over tie groups.
std::vector<double> midranks(std::span<const double> values, double* tie_term) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  double ties = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && values[idx[j + 1]] == values[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = rank;
    const double t = static_cast<double>(j - i + 1);
    ties += t * t * t - t;
    i = j + 1;
  }
  if (tie_term) *tie_term = ties;
  return ranks;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

double dsc_3d(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt,
              std::int32_t class_id) {
  require_same_size(pred.size(), gt.size(), "dsc_3d");
  std::size_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool in_p = pred[i] == class_id;
    const bool in_g = gt[i] == class_id;
    p += in_p;
    g += in_g;
    both += in_p && in_g;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

std::optional<double> ravd(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt,
                           std::int32_t class_id) {
  require_same_size(pred.size(), gt.size(), "ravd");
  const auto p = std::count(pred.begin(), pred.end(), class_id);
  const auto g = std::count(gt.begin(), gt.end(), class_id);
  if (g == 0) return std::nullopt;
  return 100.0 * static_cast<double>(std::abs(p - g)) / static_cast<double>(g);
}

double patient_auc(std::span<const double> scores, std::span<const std::int32_t> labels) {
  require_same_size(scores.size(), labels.size(), "patient_auc");
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("patient_auc: labels must be 0/1");
    (labels[i] ? pos : neg).push_back(scores[i]);
  }
  if (pos.empty() || neg.empty()) {
    throw std::invalid_argument("patient_auc needs both positive and negative patients");
  }
  const auto r = mann_whitney_u(pos, neg);
  return r.u_a / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("mann_whitney_u: empty sample");
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  double tie_term = 0.0;
  const auto ranks = midranks(pooled, &tie_term);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double n = na + nb;
  double rank_sum_a = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) rank_sum_a += ranks[i];

  MannWhitneyResult r;
  r.u_a = rank_sum_a - na * (na + 1.0) / 2.0;
  r.u_b = na * nb - r.u_a;
  r.u = std::min(r.u_a, r.u_b);
  const double variance = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  if (variance <= 0.0) {
    r.z = 0.0;
    r.p_value = 1.0;
    return r;
  }
  const double diff = std::abs(r.u_a - na * nb / 2.0);
  r.z = std::max(0.0, diff - 0.5) / std::sqrt(variance);
  r.p_value = std::min(1.0, std::erfc(r.z / std::sqrt(2.0)));
  return r;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of empty sample");
  if (!(q >= 0 && q <= 1)) throw std::invalid_argument("quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::array<double, 3> quartiles(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  return {quantile(values, 0.25), quantile(values, 0.5), quantile(values, 0.75)};
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  require_same_size(x.size(), y.size(), "pearson");
  if (x.size() < 2) return std::nullopt;
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

UncertaintySummary summarize_uncertainty(std::span<const double> uncertainty,
                                         const std::vector<bool>& correct, std::size_t bins) {
  require_same_size(uncertainty.size(), correct.size(), "summarize_uncertainty");
  if (bins == 0) throw std::invalid_argument("summarize_uncertainty: bins must be positive");
  UncertaintySummary s;
  std::vector<double> good, bad;
  for (std::size_t i = 0; i < uncertainty.size(); ++i) {
    (correct[i] ? good : bad).push_back(uncertainty[i]);
  }
  s.correct_count = good.size();
  s.incorrect_count = bad.size();
  if (!good.empty()) s.correct_quartiles = quartiles(std::move(good));
  if (!bad.empty()) s.incorrect_quartiles = quartiles(std::move(bad));

  const std::size_t n = uncertainty.size();
  if (n == 0) return s;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return uncertainty[a] < uncertainty[b]; });
  const std::size_t used_bins = std::min(bins, n);
  for (std::size_t b = 0; b < used_bins; ++b) {
    const std::size_t lo = b * n / used_bins, hi = (b + 1) * n / used_bins;
    double u = 0.0, err = 0.0;
    for (std::size_t k = lo; k < hi; ++k) {
      u += uncertainty[order[k]];
      err += correct[order[k]] ? 0.0 : 1.0;
    }
    const double count = static_cast<double>(hi - lo);
    s.bin_uncertainty.push_back(u / count);
    s.bin_error_rate.push_back(err / count);
  }
  if (s.incorrect_count > 0) s.pearson_r = pearson(s.bin_uncertainty, s.bin_error_rate);
  return s;
}

double MetricsReport::mean_dsc() const {
  if (dsc.empty()) return 0.0;
  return std::accumulate(dsc.begin(), dsc.end(), 0.0) / static_cast<double>(dsc.size());
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os << "[metrics]\n";
  os << "volumes = " << volumes << '\n';
  os << "mean_dsc = " << fmt(mean_dsc()) << '\n';
  for (std::size_t i = 0; i < classes.size(); ++i) {
    os << "dsc_class" << classes[i] << " = " << fmt(dsc[i]) << '\n';
    os << "ravd_class" << classes[i] << " = " << (ravd[i] ? fmt(*ravd[i]) : "absent") << '\n';
  }
  os << "auc = " << (auc ? fmt(*auc) : "absent") << '\n';
  if (uncertainty) {
    const auto& u = *uncertainty;
    auto triple = [](const std::optional<std::array<double, 3>>& q) {
      if (!q) return std::string("absent");
      return fmt((*q)[0]) + ", " + fmt((*q)[1]) + ", " + fmt((*q)[2]);
    };
    os << "\n[uncertainty]\n";
    os << "correct_pixels = " << u.correct_count << '\n';
    os << "incorrect_pixels = " << u.incorrect_count << '\n';
    os << "correct_quartiles = " << triple(u.correct_quartiles) << '\n';
    os << "incorrect_quartiles = " << triple(u.incorrect_quartiles) << '\n';
    os << "pearson_r = " << (u.pearson_r ? fmt(*u.pearson_r) : "absent") << '\n';
    os << "bins = " << u.bin_uncertainty.size() << '\n';
  }
  return os.str();
}

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  os << "class,dsc,ravd\n";
  for (std::size_t i = 0; i < classes.size(); ++i) {
    os << classes[i] << ',' << fmt(dsc[i]) << ',' << (ravd[i] ? fmt(*ravd[i]) : "") << '\n';
  }
  return os.str();
}

}  // namespace csam
