#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "csam/attention.hpp"
#include "csam/tensor.hpp"

// 2-D encoder/decoder segmentation backbones with a cross-slice attention
// module on every skip connection, and the generic 2.5D pipeline
//   y = F_post(D(F_mid(E(F_pre(x))))).

namespace csam {

enum class Wiring { kUNet, kUNetPlusPlus };
enum class PreStage { kIdentity, kStack };
enum class MidStage { kIdentity, kCsam };
enum class PostStage { kIdentity, kSliceAttention };

struct BackboneConfig {
  std::size_t levels = 5;
  std::size_t base_channels = 8;
  std::size_t input_channels = 1;
  std::size_t num_classes = 3;
  std::size_t slices = 8;
  Wiring wiring = Wiring::kUNet;
  /// Per-level switch; empty means every level.
  std::vector<bool> csam_levels;
  std::size_t rank = 4;
  std::size_t reduction = 8;
  std::size_t slice_reduction = 2;
  std::size_t kernel = 7;

  std::size_t channels_at(std::size_t level) const { return base_channels << level; }
  bool csam_level_enabled(std::size_t level) const;
  CsamShape csam_shape(std::size_t level) const;
  void validate() const;
};

struct PipelineConfig {
  PreStage f_pre = PreStage::kIdentity;
  std::size_t stack_neighbors = 1;
  MidStage f_mid = MidStage::kCsam;
  PostStage f_post = PostStage::kIdentity;
};

/// True when any stage mixes information across slices.
bool is_2p5d(const PipelineConfig& pipeline);

struct NetworkConfig {
  BackboneConfig backbone;
  PipelineConfig pipeline;

  /// Channels entering the first conv block, after F_pre.
  std::size_t network_input_channels() const;
  bool csam_active(std::size_t level) const;
  void validate() const;
};

/// [3x3 conv -> instance norm -> leaky ReLU(0.01)] x 2, no conv bias.
struct ConvBlockParams {
  Tensor conv1;  // (c_out, c_in, 3, 3)
  Tensor gamma1;
  Tensor beta1;
  Tensor conv2;  // (c_out, c_out, 3, 3)
  Tensor gamma2;
  Tensor beta2;

  static ConvBlockParams random(std::size_t c_in, std::size_t c_out, Rng& rng);
  std::size_t in_channels() const { return conv1.dim(1); }
  std::size_t out_channels() const { return conv1.dim(0); }
  std::vector<NamedTensor> named(const std::string& prefix);
  std::size_t parameter_count() const;
};

inline constexpr double kLeakySlope = 0.01;

/// l is the batch axis.
Tensor conv_block(const Tensor& x, const ConvBlockParams& params);

/// Slice i becomes the channel stack of slices i-n..i+n (edge slices
/// replicated), giving (l, (2n+1) c, h, w).
Tensor f_pre_stack(const Tensor& volume, std::size_t neighbors);

/// Multiplies decoder output by a per-slice gate from the slice attention
/// block. Returns (gated, gate).
std::pair<Tensor, SliceGate> f_post_slice_attention(const Tensor& decoded,
                                                    const SliceAttentionParams& params, Mode mode,
                                                    Rng& rng);

struct ForwardOutput {
  Tensor logits;                        // (l, num_classes, h, w)
  std::vector<AttentionRecord> records; // one per active attention level
  std::optional<SliceGate> post_gate;
};

class SegmentationNet {
 public:
  /// Backbone, attention and post-gate weights come from separate named
  /// streams of `seed`, so two configs differing only in attention share
  /// their backbone weights.
  SegmentationNet(NetworkConfig config, std::uint64_t seed);

  const NetworkConfig& config() const { return config_; }

  /// x is the raw (l, c0, h, w) volume; F_pre is applied here.
  ForwardOutput forward(const Tensor& x, Mode mode, Rng& rng) const;

  /// Encoder outputs x_{i,0}, i = 0..L-1.
  std::vector<Tensor> encode(const Tensor& x) const;
  /// Attention-refined skip for level i (identity when that level is off).
  Tensor refine_skip(std::size_t level, const Tensor& x, Mode mode, Rng& rng,
                     std::vector<AttentionRecord>* records) const;
  /// d_i = X_{i,1}(concat(skip_i, upsample(d_{i+1}))).
  Tensor decoder_step(std::size_t level, const Tensor& skip, const Tensor& deeper) const;

  /// Parameters in construction (= checkpoint) order.
  std::vector<NamedTensor> parameters();
  std::size_t parameter_count() const;
  std::size_t attention_parameter_count() const;

  const ConvBlockParams& encoder_block(std::size_t level) const { return encoder_.at(level); }
  const ConvBlockParams& decoder_block(std::size_t level, std::size_t column) const {
    return decoder_.at({level, column});
  }
  const std::optional<CsamParams>& attention(std::size_t level) const { return csam_.at(level); }
  const Tensor& head_weight() const { return head_weight_; }
  const Tensor& head_bias() const { return head_bias_; }

 private:
  Tensor head(const Tensor& features) const;
  Tensor unet_decode(const std::vector<Tensor>& skips) const;
  Tensor unetpp_decode(const std::vector<Tensor>& skips) const;

  NetworkConfig config_;
  std::vector<ConvBlockParams> encoder_;
  std::map<std::pair<std::size_t, std::size_t>, ConvBlockParams> decoder_;
  std::vector<std::optional<CsamParams>> csam_;
  Tensor head_weight_;  // (num_classes, base, 1, 1)
  Tensor head_bias_;    // (1, num_classes, 1, 1)
  std::optional<SliceAttentionParams> post_gate_;
};

}  // namespace csam
