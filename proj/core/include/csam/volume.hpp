#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "csam/tensor.hpp"

namespace csam {

/// Physical voxel size in millimetres, through-plane first.
struct Spacing {
  double z_mm = 5.0;
  double y_mm = 1.0;
  double x_mm = 1.0;

  bool operator==(const Spacing&) const = default;
};

/// An l x c x h x w image with optional l x h x w integer labels.
struct Volume {
  std::size_t slices = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;
  Spacing spacing;
  std::optional<std::vector<std::int32_t>> labels;
  std::string id;

  Shape shape() const { return {slices, channels, height, width}; }
  std::size_t voxels() const { return slices * height * width; }
  Tensor to_tensor() const;
  /// Throws std::invalid_argument when extents, buffers or spacing disagree.
  void validate() const;

  bool operator==(const Volume&) const = default;
};

/// CSVL reader/writer failures. Each kind is a distinct condition callers
/// may dispatch on.
class VolumeFormatError : public std::runtime_error {
 public:
  enum class Kind { kBadMagic, kUnsupportedVersion, kTruncated, kInvalidHeader, kIo };

  VolumeFormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr char kVolumeMagic[4] = {'C', 'S', 'V', 'L'};
inline constexpr std::uint8_t kVolumeVersion = 1;

/// Byte layout (little-endian):
///   "CSVL" | u8 version | u32 l, c, h, w | u8 has_labels |
///   f64 z_mm, y_mm, x_mm | u16 id_len | id bytes |
///   f64 data[l*c*h*w] | i32 labels[l*h*w] (if has_labels)
std::vector<std::uint8_t> encode_volume(const Volume& volume);
Volume decode_volume(std::span<const std::uint8_t> bytes);
std::size_t encoded_volume_size(const Volume& volume);

void write_volume(const Volume& volume, const std::filesystem::path& path);
Volume read_volume(const std::filesystem::path& path);

}  // namespace csam
