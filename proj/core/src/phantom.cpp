#include "csam/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "csam/rng.hpp"

namespace csam {

void PhantomSpec::validate() const {
  if (slices < 4) {
    throw PhantomError("phantom needs l >= 4 slices (got " + std::to_string(slices) + ")");
  }
  if (height < 8 || width < 8) throw PhantomError("phantom in-plane size must be at least 8x8");
  if (num_classes != 2 && num_classes != 3) throw PhantomError("phantom num_classes must be 2 or 3");
  if (intensities.size() != num_classes) {
    throw PhantomError("phantom needs one intensity per class");
  }
  if (std::set<double>(intensities.begin(), intensities.end()).size() != intensities.size()) {
    throw PhantomError("phantom class intensities must be distinct");
  }
  if (!(noise_sigma >= 0)) throw PhantomError("phantom noise_sigma must be non-negative");
  if (!(spacing.z_mm > 0 && spacing.y_mm > 0 && spacing.x_mm > 0)) {
    throw PhantomError("phantom spacing must be positive");
  }
}

double ellipsoid_level(const std::array<double, 3>& point, const std::array<double, 3>& center,
                       const std::array<double, 3>& axes) {
  double s = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double t = (point[a] - center[a]) / axes[a];
    s += t * t;
  }
  return s;
}

Volume generate_phantom(const PhantomSpec& spec, PhantomGeometry* geometry_out) {
  spec.validate();
  Rng rng = Rng::stream(spec.seed, "phantom");
  const std::array<double, 3> extent{spec.slices * spec.spacing.z_mm,
                                     spec.height * spec.spacing.y_mm,
                                     spec.width * spec.spacing.x_mm};
  const std::array<double, 3> step{spec.spacing.z_mm, spec.spacing.y_mm, spec.spacing.x_mm};

  PhantomGeometry geo;
  // Through-plane: keep a full slice of clearance at both ends so the first
  // and last slices are always background.
  geo.center[0] = extent[0] / 2 + rng.uniform(-0.5, 0.5) * step[0];
  const double z_room = std::min(geo.center[0] - step[0], extent[0] - step[0] - geo.center[0]);
  geo.outer_axes[0] = rng.uniform(0.6, 0.95) * z_room;
  for (int a = 1; a < 3; ++a) {
    geo.center[a] = extent[a] / 2 + rng.uniform(-0.1, 0.1) * extent[a];
    const double room = std::min(geo.center[a], extent[a] - geo.center[a]) - step[a];
    geo.outer_axes[a] = std::min(rng.uniform(0.25, 0.35) * extent[a], room);
  }
  for (int a = 0; a < 3; ++a) geo.inner_axes[a] = rng.uniform(0.45, 0.65) * geo.outer_axes[a];
  for (int a = 0; a < 3; ++a) {
    if (!(geo.outer_axes[a] > 0)) throw PhantomError("ellipsoid infeasible for phantom size");
  }

  Volume v;
  v.slices = spec.slices;
  v.channels = 1;
  v.height = spec.height;
  v.width = spec.width;
  v.spacing = spec.spacing;
  v.id = "phantom-" + std::to_string(spec.seed);
  v.data.resize(v.voxels());
  v.labels.emplace(v.voxels(), 0);

  std::size_t outer_count = 0, inner_count = 0;
  std::size_t i = 0;
  for (std::size_t z = 0; z < spec.slices; ++z)
    for (std::size_t y = 0; y < spec.height; ++y)
      for (std::size_t x = 0; x < spec.width; ++x, ++i) {
        const std::array<double, 3> p{voxel_center_mm(z, step[0]), voxel_center_mm(y, step[1]),
                                      voxel_center_mm(x, step[2])};
        std::int32_t label = 0;
        if (ellipsoid_level(p, geo.center, geo.outer_axes) <= 1.0) {
          label = 1;
          ++outer_count;
          if (ellipsoid_level(p, geo.center, geo.inner_axes) <= 1.0) {
            ++inner_count;
            if (spec.num_classes == 3) label = 2;
          }
        }
        (*v.labels)[i] = label;
      }
  if (inner_count == 0 || outer_count == inner_count || outer_count == v.voxels()) {
    throw PhantomError("ellipsoid infeasible for phantom size: regions do not resolve on the grid");
  }

  // Noise is drawn from its own stream so geometry and intensity stay
  // independent.
  Rng noise = Rng::stream(spec.seed, "phantom/noise");
  for (std::size_t k = 0; k < v.data.size(); ++k) {
    const double base = spec.intensities[static_cast<std::size_t>((*v.labels)[k])];
    v.data[k] = spec.noise_sigma > 0 ? base + spec.noise_sigma * noise.normal() : base;
  }
  if (geometry_out) *geometry_out = geo;
  return v;
}

}  // namespace csam
