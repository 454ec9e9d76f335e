#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "csam/network.hpp"

namespace csam {

struct GradCheckRow {
  std::string component;
  double max_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t kink_coordinates = 0;  // re-measured with a smaller step
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckRow> rows;
  double tolerance = 1e-4;

  bool passed() const;
  /// One aligned line per component plus a verdict line.
  std::string to_text() const;
};

struct GradCheckSuiteConfig {
  NetworkConfig network;  // full-network row
  std::size_t height = 16;
  std::size_t width = 16;
  std::uint64_t seed = 0;
  double eps = 1e-5;
  double tolerance = 1e-4;

  /// L=3, base 4, l=4, 16x16 with attention on every level.
  static GradCheckSuiteConfig toy();
};

/// Finite-difference checks over every op family, the losses, each
/// attention stage, a conv block and the whole network (input and all
/// parameters). Train-mode rows replay a fixed noise stream per evaluation.
/// Coordinates whose stencil straddles a leaky-ReLU or max kink are
/// re-measured with a smaller step and counted in the row.
GradCheckReport run_gradcheck_suite(const GradCheckSuiteConfig& cfg);

}  // namespace csam
