#pragma once

#include <cstddef>
#include <optional>

#include "csam/rng.hpp"
#include "csam/volume.hpp"

namespace csam {

struct AugmentConfig {
  std::optional<std::size_t> crop_height;  // center crop when set
  std::optional<std::size_t> crop_width;
  bool hflip = false;
  double hflip_probability = 0.5;
  bool gamma = false;
  double gamma_low = 0.7;
  double gamma_high = 1.5;

  void validate() const;
};

Volume center_crop(const Volume& v, std::size_t height, std::size_t width);
/// Mirrors the w axis of image and labels.
Volume flip_horizontal(const Volume& v);
/// Intensities are min-max normalized, raised to `gamma`, and mapped back.
/// Labels are untouched; a constant image is returned unchanged.
Volume gamma_transform(const Volume& v, double gamma);

/// Crop (if configured), then flip with the configured probability, then a
/// gamma drawn uniformly from [gamma_low, gamma_high].
Volume augment(const Volume& v, const AugmentConfig& cfg, Rng& rng);

}  // namespace csam
