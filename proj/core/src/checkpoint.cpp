#include "csam/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "csam/config.hpp"

namespace csam {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void get_doubles(std::span<double> out) {
    need(out.size() * sizeof(double));
    std::memcpy(out.data(), bytes_.data() + pos_, out.size() * sizeof(double));
    pos_ += out.size() * sizeof(double);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint is truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(SegmentationNet& net) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put<std::uint8_t>(out, kCheckpointVersion);
  const std::string descriptor = network_to_text(net.config());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(descriptor.size()));
  out.insert(out.end(), descriptor.begin(), descriptor.end());
  const auto params = net.parameters();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(p.tensor->rank()));
    for (std::size_t d : p.tensor->shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  for (const auto& p : params) {
    const auto data = p.tensor->data();
    const auto* b = reinterpret_cast<const std::uint8_t*>(data.data());
    out.insert(out.end(), b, b + data.size() * sizeof(double));
  }
  return out;
}

SegmentationNet decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  if (in.get_string(4) != std::string(kCheckpointMagic, 4)) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  if (const auto version = in.get<std::uint8_t>(); version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::string descriptor = in.get_string(in.get<std::uint32_t>());
  NetworkConfig cfg;
  try {
    cfg = parse_network_config(descriptor);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("bad checkpoint descriptor: ") + e.what());
  }
  SegmentationNet net(cfg, 0);
  auto params = net.parameters();
  if (in.get<std::uint32_t>() != params.size()) {
    throw CheckpointError("checkpoint tensor count does not match its descriptor");
  }
  for (const auto& p : params) {
    const std::string name = in.get_string(in.get<std::uint16_t>());
    Shape shape(in.get<std::uint8_t>());
    for (auto& d : shape) d = in.get<std::uint32_t>();
    if (name != p.name || shape != p.tensor->shape()) {
      throw CheckpointError("checkpoint tensor '" + name + "' " + to_string(shape) +
                            " does not match expected '" + p.name + "' " +
                            to_string(p.tensor->shape()));
    }
  }
  for (const auto& p : params) in.get_doubles(p.tensor->mutable_data());
  if (!in.done()) throw CheckpointError("trailing bytes after checkpoint parameters");
  return net;
}

void save_checkpoint(SegmentationNet& net, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(net);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing " + path.string());
}

SegmentationNet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace csam
