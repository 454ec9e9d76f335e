#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "csam/volume.hpp"

namespace csam {

/// Nested-ellipsoid phantom: background (0), outer shell (1) and inner core
/// (2), loosely modelled on prostate peripheral and transition zones. With
/// two classes the whole outer ellipsoid is label 1.
struct PhantomSpec {
  std::size_t slices = 8;
  std::size_t height = 32;
  std::size_t width = 32;
  Spacing spacing{5.0, 1.0, 1.0};
  std::size_t num_classes = 3;
  double noise_sigma = 0.1;
  std::vector<double> intensities{0.0, 1.0, 0.5};
  std::uint64_t seed = 0;

  void validate() const;
};

class PhantomError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Ellipsoid parameters in millimetres, (z, y, x) order.
struct PhantomGeometry {
  std::array<double, 3> center{};
  std::array<double, 3> outer_axes{};
  std::array<double, 3> inner_axes{};
};

/// Deterministic in spec.seed. Neither ellipsoid reaches the first or last
/// slice. Throws PhantomError if the grid cannot hold both regions.
Volume generate_phantom(const PhantomSpec& spec, PhantomGeometry* geometry = nullptr);

/// Physical coordinate (mm) of a voxel centre along one axis.
inline double voxel_center_mm(std::size_t index, double spacing) {
  return (static_cast<double>(index) + 0.5) * spacing;
}

/// Sum of squared normalized offsets; <= 1 means inside.
double ellipsoid_level(const std::array<double, 3>& point, const std::array<double, 3>& center,
                       const std::array<double, 3>& axes);

}  // namespace csam
