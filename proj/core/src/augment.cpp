#include "csam/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace csam {

void AugmentConfig::validate() const {
  if (!(hflip_probability >= 0 && hflip_probability <= 1)) {
    throw std::invalid_argument("hflip probability must lie in [0, 1]");
  }
  if (!(gamma_low > 0 && gamma_high >= gamma_low)) {
    throw std::invalid_argument("gamma range must be positive and ordered");
  }
  if (crop_height.has_value() != crop_width.has_value()) {
    throw std::invalid_argument("center crop needs both height and width");
  }
}

Volume center_crop(const Volume& v, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0 || height > v.height || width > v.width) {
    throw std::invalid_argument("center crop target exceeds the volume");
  }
  // Same tie-break as the tensor crop: odd margins drop the extra row/column
  // from the low side.
  const std::size_t y0 = (v.height - height + 1) / 2;
  const std::size_t x0 = (v.width - width + 1) / 2;
  Volume out = v;
  out.height = height;
  out.width = width;
  out.data.assign(v.slices * v.channels * height * width, 0.0);
  for (std::size_t p = 0; p < v.slices * v.channels; ++p)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        out.data[(p * height + y) * width + x] = v.data[(p * v.height + y + y0) * v.width + x + x0];
  if (v.labels) {
    out.labels.emplace(v.slices * height * width);
    for (std::size_t s = 0; s < v.slices; ++s)
      for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x)
          (*out.labels)[(s * height + y) * width + x] =
              (*v.labels)[(s * v.height + y + y0) * v.width + x + x0];
  }
  return out;
}

Volume flip_horizontal(const Volume& v) {
  Volume out = v;
  const std::size_t w = v.width;
  for (std::size_t row = 0; row < v.data.size() / w; ++row) {
    std::reverse(out.data.begin() + row * w, out.data.begin() + (row + 1) * w);
  }
  if (out.labels) {
    for (std::size_t row = 0; row < out.labels->size() / w; ++row) {
      std::reverse(out.labels->begin() + row * w, out.labels->begin() + (row + 1) * w);
    }
  }
  return out;
}

Volume gamma_transform(const Volume& v, double gamma) {
  if (!(gamma > 0)) throw std::invalid_argument("gamma must be positive");
  const auto [lo_it, hi_it] = std::minmax_element(v.data.begin(), v.data.end());
  const double lo = *lo_it, hi = *hi_it;
  Volume out = v;
  if (hi == lo || gamma == 1.0) return out;
  const double range = hi - lo;
  for (double& x : out.data) x = std::pow((x - lo) / range, gamma) * range + lo;
  return out;
}

Volume augment(const Volume& v, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  Volume out = cfg.crop_height ? center_crop(v, *cfg.crop_height, *cfg.crop_width) : v;
  if (cfg.hflip && rng.bernoulli(cfg.hflip_probability)) out = flip_horizontal(out);
  if (cfg.gamma) out = gamma_transform(out, rng.uniform(cfg.gamma_low, cfg.gamma_high));
  return out;
}

}  // namespace csam
