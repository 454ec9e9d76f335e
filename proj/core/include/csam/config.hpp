#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "csam/network.hpp"
#include "csam/phantom.hpp"
#include "csam/trainer.hpp"
#include "csam/uncertainty.hpp"

// Run configuration as an INI document:
//
//   seed = 7
//   [model]     levels, base_channels, input_channels, num_classes, slices,
//               wiring (unet | unetpp), csam_levels (all | none | 1,0,1,...),
//               rank, reduction, slice_reduction, kernel
//   [pipeline]  f_pre (identity | stack), stack_neighbors,
//               f_mid (identity | csam), f_post (identity | slice_attention)
//   [train]     lr, weight_decay, epochs, loss (cross_entropy | dice | focal),
//               focal_gamma, focal_alpha
//   [augment]   crop_height, crop_width, hflip, hflip_probability,
//               gamma, gamma_low, gamma_high
//   [phantom]   slices, height, width, spacing_z, spacing_y, spacing_x,
//               num_classes, noise_sigma, intensities (comma list)
//   [eval]      mc_samples, bins, uncertainty
//   [data]      manifest, train_folds, eval_folds (comma lists; empty = all)
//
// Every key is optional and defaults to the struct defaults; unknown
// sections or keys are errors.

namespace csam {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::string manifest;
  std::vector<std::size_t> train_folds;
  std::vector<std::size_t> eval_folds;
};

struct RunConfig {
  std::optional<std::uint64_t> seed;
  NetworkConfig network;
  TrainConfig train;
  PhantomSpec phantom;
  EvalConfig eval;
  DataConfig data;

  /// Throws ConfigError when the seed is missing.
  std::uint64_t require_seed() const;
  /// Cross-field checks; throws ConfigError.
  void validate() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string to_text(const RunConfig& cfg);

/// [model] and [pipeline] sections only; used as the checkpoint descriptor.
std::string network_to_text(const NetworkConfig& cfg);
NetworkConfig parse_network_config(const std::string& text);

}  // namespace csam
