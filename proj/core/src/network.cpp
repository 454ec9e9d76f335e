#include "csam/network.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>

#include "csam/ops.hpp"

namespace csam {

namespace {

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> v(numel(shape));
  for (double& x : v) x = stddev * rng.normal();
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

std::string level_tag(std::size_t i, std::size_t j) {
  return "x" + std::to_string(i) + "_" + std::to_string(j) + ".";
}

}  // namespace

bool BackboneConfig::csam_level_enabled(std::size_t level) const {
  return csam_levels.empty() || (level < csam_levels.size() && csam_levels[level]);
}

CsamShape BackboneConfig::csam_shape(std::size_t level) const {
  return {slices, channels_at(level), rank, kernel, reduction, slice_reduction};
}

void BackboneConfig::validate() const {
  if (levels < 2) throw std::invalid_argument("backbone needs at least 2 levels");
  if (base_channels == 0 || input_channels == 0 || slices == 0) {
    throw std::invalid_argument("backbone extents must be positive");
  }
  if (num_classes < 2) throw std::invalid_argument("num_classes must be at least 2");
  if (!csam_levels.empty() && csam_levels.size() != levels) {
    throw std::invalid_argument("csam_levels must list one flag per level");
  }
  for (std::size_t i = 0; i < levels; ++i) csam_shape(i).validate();
}

bool is_2p5d(const PipelineConfig& pipeline) {
  return pipeline.f_pre == PreStage::kStack || pipeline.f_mid == MidStage::kCsam ||
         pipeline.f_post == PostStage::kSliceAttention;
}

std::size_t NetworkConfig::network_input_channels() const {
  if (pipeline.f_pre == PreStage::kStack) {
    return (2 * pipeline.stack_neighbors + 1) * backbone.input_channels;
  }
  return backbone.input_channels;
}

bool NetworkConfig::csam_active(std::size_t level) const {
  return pipeline.f_mid == MidStage::kCsam && backbone.csam_level_enabled(level);
}

void NetworkConfig::validate() const {
  backbone.validate();
  if (pipeline.f_pre == PreStage::kStack) {
    if (pipeline.stack_neighbors == 0) throw std::invalid_argument("stack_neighbors must be >= 1");
    if (pipeline.stack_neighbors >= backbone.slices) {
      throw std::invalid_argument("stack_neighbors must be smaller than the slice count");
    }
  }
}

ConvBlockParams ConvBlockParams::random(std::size_t c_in, std::size_t c_out, Rng& rng) {
  ConvBlockParams p;
  p.conv1 = he_normal({c_out, c_in, 3, 3}, c_in * 9, rng);
  p.gamma1 = Tensor::full({c_out}, 1.0, true);
  p.beta1 = Tensor::zeros({c_out}, true);
  p.conv2 = he_normal({c_out, c_out, 3, 3}, c_out * 9, rng);
  p.gamma2 = Tensor::full({c_out}, 1.0, true);
  p.beta2 = Tensor::zeros({c_out}, true);
  return p;
}

std::vector<NamedTensor> ConvBlockParams::named(const std::string& prefix) {
  return {{prefix + "conv1", &conv1}, {prefix + "gamma1", &gamma1}, {prefix + "beta1", &beta1},
          {prefix + "conv2", &conv2}, {prefix + "gamma2", &gamma2}, {prefix + "beta2", &beta2}};
}

std::size_t ConvBlockParams::parameter_count() const {
  return conv1.numel() + gamma1.numel() + beta1.numel() + conv2.numel() + gamma2.numel() +
         beta2.numel();
}

Tensor conv_block(const Tensor& x, const ConvBlockParams& p) {
  if (x.rank() != 4 || x.dim(1) != p.in_channels()) {
    throw ShapeError("conv_block expects (l, " + std::to_string(p.in_channels()) +
                     ", h, w), got " + to_string(x.shape()));
  }
  Tensor y = leaky_relu(instance_norm(conv2d_same(x, p.conv1), p.gamma1, p.beta1), kLeakySlope);
  return leaky_relu(instance_norm(conv2d_same(y, p.conv2), p.gamma2, p.beta2), kLeakySlope);
}

Tensor f_pre_stack(const Tensor& volume, std::size_t neighbors) {
  if (volume.rank() != 4) throw ShapeError("f_pre_stack expects (l, c, h, w)");
  const std::size_t l = volume.dim(0), c = volume.dim(1);
  if (neighbors == 0) throw std::invalid_argument("f_pre_stack: neighbors must be >= 1");
  if (neighbors >= l) throw std::invalid_argument("f_pre_stack: neighbors must be < slice count");
  const std::size_t slice_size = c * volume.dim(2) * volume.dim(3);
  const std::size_t width = 2 * neighbors + 1;
  // source[i * width + j] = slice feeding channel group j of output slice i
  std::vector<std::size_t> source(l * width);
  for (std::size_t i = 0; i < l; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      const long s = static_cast<long>(i + j) - static_cast<long>(neighbors);
      source[i * width + j] =
          static_cast<std::size_t>(std::clamp(s, 0L, static_cast<long>(l) - 1));
    }
  }
  const auto v = volume.data();
  std::vector<double> out(l * width * slice_size);
  for (std::size_t g = 0; g < source.size(); ++g) {
    std::copy_n(v.begin() + source[g] * slice_size, slice_size, out.begin() + g * slice_size);
  }
  return record_op("f_pre_stack", {l, width * c, volume.dim(2), volume.dim(3)}, std::move(out),
                   {volume},
                   [source, slice_size](std::span<const double> g,
                                        std::span<const std::span<double>> gin) {
                     for (std::size_t k = 0; k < source.size(); ++k)
                       for (std::size_t e = 0; e < slice_size; ++e)
                         gin[0][source[k] * slice_size + e] += g[k * slice_size + e];
                   });
}

std::pair<Tensor, SliceGate> f_post_slice_attention(const Tensor& decoded,
                                                    const SliceAttentionParams& params, Mode mode,
                                                    Rng& rng) {
  SliceGate gate = slice_attention(decoded, params, mode, rng);
  Tensor gated = mul(gate.gate, decoded);
  return {std::move(gated), std::move(gate)};
}

SegmentationNet::SegmentationNet(NetworkConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
  config_.validate();
  const auto& bb = config_.backbone;
  const std::size_t L = bb.levels;
  Rng backbone_rng = Rng::stream(seed, "init/backbone");
  Rng attention_rng = Rng::stream(seed, "init/attention");
  Rng post_rng = Rng::stream(seed, "init/post");

  std::size_t c_in = config_.network_input_channels();
  for (std::size_t i = 0; i < L; ++i) {
    encoder_.push_back(ConvBlockParams::random(c_in, bb.channels_at(i), backbone_rng));
    c_in = bb.channels_at(i);
  }
  // U-Net uses only column 1; U-Net++ fills X_{i,j} for i + j <= L - 1.
  const std::size_t columns = bb.wiring == Wiring::kUNet ? 1 : L - 1;
  for (std::size_t j = 1; j <= columns; ++j) {
    for (std::size_t i = 0; i + j < L; ++i) {
      const std::size_t c = bb.channels_at(i);
      decoder_.emplace(std::make_pair(i, j),
                       ConvBlockParams::random(j * c + bb.channels_at(i + 1), c, backbone_rng));
    }
  }
  head_weight_ = he_normal({bb.num_classes, bb.base_channels, 1, 1}, bb.base_channels,
                           backbone_rng);
  head_bias_ = Tensor::zeros({1, bb.num_classes, 1, 1}, true);

  // Attention weights are drawn for every level so enabling or disabling a
  // level never changes the others.
  for (std::size_t i = 0; i < L; ++i) {
    CsamParams p = CsamParams::random(bb.csam_shape(i), attention_rng);
    if (config_.csam_active(i)) {
      csam_.emplace_back(std::move(p));
    } else {
      csam_.emplace_back(std::nullopt);
    }
  }
  if (config_.pipeline.f_post == PostStage::kSliceAttention) {
    const CsamShape s{bb.slices, bb.num_classes, bb.rank, bb.kernel, bb.reduction,
                      bb.slice_reduction};
    post_gate_ = SliceAttentionParams::random(bb.slices, bb.rank, s.slice_hidden(), post_rng);
  }
}

std::vector<Tensor> SegmentationNet::encode(const Tensor& x) const {
  const auto& bb = config_.backbone;
  if (x.rank() != 4) throw ShapeError("encoder expects (l, c, h, w)");
  const std::size_t factor = std::size_t{1} << (bb.levels - 1);
  if (x.dim(2) % factor != 0 || x.dim(3) % factor != 0) {
    throw ShapeError("spatial size " + to_string(x.shape()) + " must be divisible by " +
                     std::to_string(factor));
  }
  std::vector<Tensor> outs;
  Tensor cur = x;
  for (std::size_t i = 0; i < bb.levels; ++i) {
    if (i > 0) cur = max_pool2d(cur, 2);
    cur = conv_block(cur, encoder_[i]);
    outs.push_back(cur);
  }
  return outs;
}

Tensor SegmentationNet::refine_skip(std::size_t level, const Tensor& x, Mode mode, Rng& rng,
                                    std::vector<AttentionRecord>* records) const {
  const auto& params = csam_.at(level);
  if (!params) return x;
  auto [refined, record] = csam_forward(x, *params, mode, rng);
  if (records) records->push_back(std::move(record));
  return refined;
}

Tensor SegmentationNet::decoder_step(std::size_t level, const Tensor& skip,
                                     const Tensor& deeper) const {
  if (level + 1 >= config_.backbone.levels) throw std::out_of_range("decoder level out of range");
  const Tensor up = upsample_nearest(deeper, 2);
  if (up.dim(2) != skip.dim(2) || up.dim(3) != skip.dim(3)) {
    throw ShapeError("decoder spatial misalignment at level " + std::to_string(level));
  }
  return conv_block(concat({skip, up}, 1), decoder_.at({level, 1}));
}

Tensor SegmentationNet::unet_decode(const std::vector<Tensor>& skips) const {
  const std::size_t L = config_.backbone.levels;
  Tensor d = skips[L - 1];  // deepest refined map stands in for d_{L-1}
  for (std::size_t i = L - 1; i-- > 0;) d = decoder_step(i, skips[i], d);
  return d;
}

Tensor SegmentationNet::unetpp_decode(const std::vector<Tensor>& skips) const {
  const std::size_t L = config_.backbone.levels;
  // nodes[i][j] = x_{i,j}; column 0 holds the refined skips.
  std::vector<std::vector<Tensor>> nodes(L);
  for (std::size_t i = 0; i < L; ++i) nodes[i].push_back(skips[i]);
  for (std::size_t j = 1; j < L; ++j) {
    for (std::size_t i = 0; i + j < L; ++i) {
      std::vector<Tensor> inputs(nodes[i].begin(), nodes[i].begin() + j);
      inputs.push_back(upsample_nearest(nodes[i + 1][j - 1], 2));
      const auto& block = decoder_.at({i, j});
      const Tensor cat = concat(inputs, 1);
      if (cat.dim(1) != block.in_channels()) {
        throw ShapeError("dense skip channel count mismatch at X_" + std::to_string(i) + "," +
                         std::to_string(j));
      }
      nodes[i].push_back(conv_block(cat, block));
    }
  }
  return nodes[0][L - 1];
}

Tensor SegmentationNet::head(const Tensor& features) const {
  return add(conv2d(features, head_weight_, 0), head_bias_);
}

ForwardOutput SegmentationNet::forward(const Tensor& x, Mode mode, Rng& rng) const {
  const auto& bb = config_.backbone;
  if (x.rank() != 4 || x.dim(0) != bb.slices || x.dim(1) != bb.input_channels) {
    throw ShapeError("network built for (" + std::to_string(bb.slices) + ", " +
                     std::to_string(bb.input_channels) + ", h, w) input, got " +
                     to_string(x.shape()));
  }
  ForwardOutput out;
  Tensor input = x;
  if (config_.pipeline.f_pre == PreStage::kStack) {
    input = f_pre_stack(x, config_.pipeline.stack_neighbors);
  }
  const std::vector<Tensor> encoded = encode(input);
  std::vector<Tensor> skips;
  for (std::size_t i = 0; i < bb.levels; ++i) {
    skips.push_back(refine_skip(i, encoded[i], mode, rng, &out.records));
  }
  const Tensor decoded =
      bb.wiring == Wiring::kUNet ? unet_decode(skips) : unetpp_decode(skips);
  out.logits = head(decoded);
  if (post_gate_) {
    auto [gated, gate] = f_post_slice_attention(out.logits, *post_gate_, mode, rng);
    out.logits = std::move(gated);
    out.post_gate = std::move(gate);
  }
  return out;
}

std::vector<NamedTensor> SegmentationNet::parameters() {
  std::vector<NamedTensor> out;
  auto append = [&out](std::vector<NamedTensor> more) {
    out.insert(out.end(), more.begin(), more.end());
  };
  for (std::size_t i = 0; i < encoder_.size(); ++i) append(encoder_[i].named(level_tag(i, 0)));
  for (std::size_t i = 0; i < csam_.size(); ++i) {
    if (csam_[i]) append(csam_[i]->named("csam" + std::to_string(i) + "."));
  }
  // Column-major over the decoder grid so U-Net and U-Net++ agree on column 1.
  std::vector<std::pair<std::size_t, std::size_t>> keys;
  for (const auto& [key, _] : decoder_) keys.push_back(key);
  std::sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) {
    return std::tie(a.second, a.first) < std::tie(b.second, b.first);
  });
  for (const auto& key : keys) append(decoder_.at(key).named(level_tag(key.first, key.second)));
  out.push_back({"head.weight", &head_weight_});
  out.push_back({"head.bias", &head_bias_});
  if (post_gate_) append(post_gate_->named("post."));
  return out;
}

std::size_t SegmentationNet::parameter_count() const {
  std::size_t n = head_weight_.numel() + head_bias_.numel() + attention_parameter_count();
  for (const auto& b : encoder_) n += b.parameter_count();
  for (const auto& [_, b] : decoder_) n += b.parameter_count();
  if (post_gate_) n += post_gate_->parameter_count();
  return n;
}

std::size_t SegmentationNet::attention_parameter_count() const {
  std::size_t n = 0;
  for (const auto& c : csam_) {
    if (c) n += c->parameter_count();
  }
  return n;
}

}  // namespace csam
