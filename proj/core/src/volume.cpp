#include "csam/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace csam {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* field) {
    if (pos_ + sizeof(T) > bytes_.size()) {
      throw VolumeFormatError(VolumeFormatError::Kind::kTruncated,
                              std::string("CSVL truncated while reading ") + field);
    }
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }

  std::string get_string(std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw VolumeFormatError(VolumeFormatError::Kind::kTruncated, "CSVL truncated in id");
    }
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

constexpr std::size_t kFixedHeader = 4 + 1 + 4 * 4 + 1 + 3 * 8 + 2;

}  // namespace

Tensor Volume::to_tensor() const { return Tensor::from_data(shape(), data); }

void Volume::validate() const {
  if (slices == 0 || channels == 0 || height == 0 || width == 0) {
    throw std::invalid_argument("volume extents must be positive");
  }
  if (data.size() != slices * channels * height * width) {
    throw std::invalid_argument("volume data length does not match its extents");
  }
  if (labels && labels->size() != voxels()) {
    throw std::invalid_argument("label grid does not match (l, h, w)");
  }
  if (!(spacing.z_mm > 0 && spacing.y_mm > 0 && spacing.x_mm > 0)) {
    throw std::invalid_argument("voxel spacing must be positive");
  }
  if (id.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw std::invalid_argument("volume id too long");
  }
}

std::size_t encoded_volume_size(const Volume& v) {
  return kFixedHeader + v.id.size() + 8 * v.data.size() + (v.labels ? 4 * v.labels->size() : 0);
}

std::vector<std::uint8_t> encode_volume(const Volume& v) {
  v.validate();
  std::vector<std::uint8_t> out;
  out.reserve(encoded_volume_size(v));
  out.insert(out.end(), std::begin(kVolumeMagic), std::end(kVolumeMagic));
  put<std::uint8_t>(out, kVolumeVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(v.slices));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(v.channels));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(v.height));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(v.width));
  put<std::uint8_t>(out, v.labels ? 1 : 0);
  put<double>(out, v.spacing.z_mm);
  put<double>(out, v.spacing.y_mm);
  put<double>(out, v.spacing.x_mm);
  put<std::uint16_t>(out, static_cast<std::uint16_t>(v.id.size()));
  out.insert(out.end(), v.id.begin(), v.id.end());
  for (double d : v.data) put<double>(out, d);
  if (v.labels) {
    for (std::int32_t label : *v.labels) put<std::int32_t>(out, label);
  }
  return out;
}

Volume decode_volume(std::span<const std::uint8_t> bytes) {
  const std::size_t head = std::min<std::size_t>(bytes.size(), 4);
  if (head > 0 && std::memcmp(bytes.data(), kVolumeMagic, head) != 0) {
    throw VolumeFormatError(VolumeFormatError::Kind::kBadMagic, "not a CSVL file (bad magic)");
  }
  if (bytes.size() < 4) throw VolumeFormatError(VolumeFormatError::Kind::kTruncated, "CSVL truncated in magic");
  Reader r(bytes.subspan(4));
  const auto version = r.get<std::uint8_t>("version");
  if (version != kVolumeVersion) {
    throw VolumeFormatError(VolumeFormatError::Kind::kUnsupportedVersion,
                            "unsupported CSVL version " + std::to_string(version));
  }
  Volume v;
  v.slices = r.get<std::uint32_t>("l");
  v.channels = r.get<std::uint32_t>("c");
  v.height = r.get<std::uint32_t>("h");
  v.width = r.get<std::uint32_t>("w");
  const auto has_labels = r.get<std::uint8_t>("has_labels");
  if (has_labels > 1) {
    throw VolumeFormatError(VolumeFormatError::Kind::kInvalidHeader, "has_labels must be 0 or 1");
  }
  v.spacing.z_mm = r.get<double>("z spacing");
  v.spacing.y_mm = r.get<double>("y spacing");
  v.spacing.x_mm = r.get<double>("x spacing");
  v.id = r.get_string(r.get<std::uint16_t>("id length"));

  const std::size_t n = v.slices * v.channels * v.height * v.width;
  const std::size_t need = 8 * n + (has_labels ? 4 * v.voxels() : 0);
  if (r.remaining() < need) {
    throw VolumeFormatError(VolumeFormatError::Kind::kTruncated, "CSVL payload truncated");
  }
  if (r.remaining() > need) {
    throw VolumeFormatError(VolumeFormatError::Kind::kInvalidHeader,
                            "CSVL has trailing bytes after payload");
  }
  v.data.resize(n);
  for (double& d : v.data) d = r.get<double>("data");
  if (has_labels) {
    v.labels.emplace(v.voxels());
    for (std::int32_t& label : *v.labels) label = r.get<std::int32_t>("labels");
  }
  try {
    v.validate();
  } catch (const std::invalid_argument& e) {
    throw VolumeFormatError(VolumeFormatError::Kind::kInvalidHeader, e.what());
  }
  return v;
}

void write_volume(const Volume& volume, const std::filesystem::path& path) {
  const auto bytes = encode_volume(volume);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw VolumeFormatError(VolumeFormatError::Kind::kIo, "cannot open " + path.string());
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw VolumeFormatError(VolumeFormatError::Kind::kIo, "write failed: " + path.string());
}

Volume read_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw VolumeFormatError(VolumeFormatError::Kind::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_volume(bytes);
}

}  // namespace csam
