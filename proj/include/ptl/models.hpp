#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ptl/nn/checkpoint.hpp"
#include "ptl/nn/layers.hpp"

namespace ptl {

/// Toy-scale configuration of the fully convolutional backbone: a VGG-style
/// encoder, one multiscale branch per pooling layer, a concatenation at 1/8
/// resolution and a three-block upsampling decoder.
struct BackboneConfig {
  int input_size = 64;
  int encoder_blocks = 4;
  int base_channels = 16;
  int multiscale_channels = 32;
  int branch_channels = 3;  // output width of each branch's last 1x1 block
  int convs_per_block = 2;

  /// Throws std::invalid_argument unless every size is positive and
  /// input_size is divisible by 2^max(encoder_blocks, 3).
  void validate() const;
  int encoder_width(int level) const;
  int decoder_width(int block) const;
  /// Stride of the branch's first 3x3 conv and the nearest upsampling factor
  /// that follows it, so every branch lands on input_size / 8.
  int branch_stride(int level) const;
  int branch_upsample(int level) const;

  nlohmann::json to_json() const;
  static BackboneConfig from_json(const nlohmann::json& j);
};

/// Which leading part of a pretrained network stays fixed while fine-tuning.
/// Named "none", "block1_pool" ... "blockN_pool" or "concatenate".
struct FreezeStage {
  int encoder_blocks = 0;  // encoder blocks 1..encoder_blocks are frozen
  bool branches = false;   // multiscale branches are frozen too

  std::string name() const;
  /// Throws std::invalid_argument for names unknown to `config`.
  static FreezeStage parse(const std::string& name, const BackboneConfig& config);
};

std::vector<std::string> freeze_stage_names(const BackboneConfig& config);

/// conv -> batch norm -> ReLU.
struct ConvBlock {
  std::string name;
  nn::Conv2d conv;
  nn::BatchNorm2d bn;
  nn::ReLU relu;

  ConvBlock() = default;
  ConvBlock(const std::string& name, int in, int out, int kernel, int stride, Rng& rng);
  nn::Tensor forward(const nn::Tensor& x, bool train);
  nn::Tensor backward(const nn::Tensor& grad);
  void clear();
};

class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& config, Rng& rng);

  /// [N, 3, S, S] -> [N, decoder_width(2), S, S]. With `train` set, unfrozen
  /// layers use batch statistics and record for backward; frozen layers always
  /// run in inference mode.
  nn::Tensor forward(const nn::Tensor& x, bool train);
  /// Accumulates gradients of the trainable layers. Must mirror forward calls.
  void backward(const nn::Tensor& grad);

  void set_freeze(const FreezeStage& stage);
  const FreezeStage& freeze() const { return freeze_; }
  const BackboneConfig& config() const { return config_; }
  int output_channels() const { return config_.decoder_width(2); }

  std::vector<nn::Parameter*> parameters();
  /// Parameters plus batch-norm running statistics, under stable names.
  std::vector<nn::NamedTensor> state() const;
  void load_state(const std::map<std::string, nn::Tensor>& tensors);
  void clear();

  /// Spatial size of each branch output before concatenation (for tests).
  std::vector<int> branch_output_sizes() const;

 private:
  struct Branch {
    ConvBlock strided, mix, out;
    nn::Upsample up{1};
  };
  struct DecoderBlock {
    nn::Upsample up{2};
    ConvBlock conv3, conv1;
  };

  std::vector<ConvBlock*> all_blocks();
  std::vector<std::pair<std::string, nn::Tensor*>> named_tensors();
  void apply_input_grads();

  BackboneConfig config_;
  FreezeStage freeze_;
  std::vector<std::vector<ConvBlock>> encoder_;
  std::vector<nn::MaxPool2d> pools_;
  std::vector<Branch> branches_;
  std::vector<DecoderBlock> decoder_;
};

/// Regresses the per-pixel exposure shift Y = x M from an (I, I~) pair.
class AetModel {
 public:
  AetModel() = default;
  AetModel(const BackboneConfig& config, std::uint64_t seed);

  /// Shared backbone on both inputs, channel concatenation, linear 3x3 conv.
  nn::Tensor forward(const nn::Tensor& original, const nn::Tensor& transformed, bool train);
  void backward(const nn::Tensor& grad);
  /// Reentrant inference.
  nn::Tensor predict(const nn::Tensor& original, const nn::Tensor& transformed) const;

  void zero_head();
  std::vector<nn::Parameter*> parameters();
  std::vector<nn::NamedTensor> state() const;
  const BackboneConfig& config() const { return backbone.config(); }

  void save(const std::string& path, std::map<std::string, std::string> metadata = {}) const;
  static AetModel load(const std::string& path);
  static AetModel from_checkpoint(const nn::Checkpoint& ckpt);

  Backbone backbone;
  nn::Conv2d head;  // [1, 2 * backbone width, 3, 3]
};

/// Three-class dense classifier (negative, positive, none).
class PtcModel {
 public:
  static constexpr double kDropoutRate = 0.75;

  PtcModel() = default;
  /// Randomly initialised (no pretraining).
  PtcModel(const BackboneConfig& config, std::uint64_t seed);

  /// Per-pixel class probabilities [N, 3, S, S].
  nn::Tensor forward(const nn::Tensor& x, bool train);
  void backward(const nn::Tensor& grad);
  nn::Tensor predict(const nn::Tensor& x) const;

  void set_freeze(const FreezeStage& stage) { backbone.set_freeze(stage); }
  std::vector<nn::Parameter*> parameters();
  std::vector<nn::NamedTensor> state() const;
  const BackboneConfig& config() const { return backbone.config(); }

  void save(const std::string& path, std::map<std::string, std::string> metadata = {}) const;
  static PtcModel load(const std::string& path);
  static PtcModel from_checkpoint(const nn::Checkpoint& ckpt);

  Backbone backbone;
  nn::SpatialDropout dropout;
  nn::Conv2d head;  // [3, backbone width, 3, 3]
  nn::ChannelSoftmax softmax;
};

/// Copies the AET backbone, attaches a fresh dropout + 3-channel softmax head
/// and freezes everything up to and including `freeze_stage`.
PtcModel build_ptc_from_aet(const AetModel& aet, const std::string& freeze_stage, std::uint64_t seed);

std::size_t parameter_count(std::vector<nn::Parameter*> params);

}  // namespace ptl
