#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "csam/network.hpp"

namespace csam {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[4] = {'C', 'S', 'C', 'K'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

/// Byte layout (little-endian):
///   "CSCK" | u8 version | u32 descriptor_len | descriptor (INI text of the
///   network config) | u32 tensor_count |
///   per tensor: u16 name_len | name | u8 rank | u32 extents[rank] |
///   f64 parameters, all tensors back to back in construction order
std::vector<std::uint8_t> encode_checkpoint(SegmentationNet& net);
/// Rebuilds the network from the descriptor and overwrites its parameters.
SegmentationNet decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(SegmentationNet& net, const std::filesystem::path& path);
SegmentationNet load_checkpoint(const std::filesystem::path& path);

}  // namespace csam
