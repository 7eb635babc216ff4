#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sparnet/nn.hpp"

namespace sparnet::model {

enum class Variant { sparnet, sparnethd };
enum class FauMode { plain, down, up };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

// Generator topology. Channel width starts at base_channels at full
// resolution, doubles with every down FAU and halves with every up FAU,
// never exceeding max_channels. Attention branches are enabled on the last
// attention_count FAUs in forward order.
struct ModelConfig {
  Variant variant = Variant::sparnet;
  int hr_side = 128;
  int base_channels = 32;
  int max_channels = 128;
  int attention_channels = 64;  // filters in every hourglass conv
  int n_down = 3;
  int n_feat = 10;
  int n_up = 3;
  int attention_count = 16;
  int bottleneck_size = 4;
  std::uint64_t seed = 0;

  int fau_count() const { return n_down + n_feat + n_up; }
  int bottleneck_side() const { return hr_side >> n_down; }
  // Throws ConfigError describing the first violated constraint.
  void validate() const;

  // SPARNet-V16-S4 at 128x128.
  static ModelConfig sparnet();
  // Ablations of the reference model.
  static ModelConfig sparnet_v(int attention_count);
  static ModelConfig sparnet_s(int bottleneck_size);
  static ModelConfig sparnethd();
  // Small network for CPU-scale experiments and tests.
  static ModelConfig tiny(int hr_side = 128);

  bool operator==(const ModelConfig&) const = default;
};

// Per-FAU layout derived from a config.
struct FauSpec {
  FauMode mode;
  int in_channels;
  int out_channels;
  int out_side;        // feature / attention map resolution
  int hourglass_depth; // log2(out_side / bottleneck_size)
  bool attention;
};
std::vector<FauSpec> fau_layout(const ModelConfig& cfg);

// Attention branch: hourglass of Conv-BN-PReLU blocks with additive skips,
// bottleneck at (side >> depth), then Conv -> 1 channel logits.
class Hourglass {
 public:
  Hourglass() = default;
  Hourglass(int in_channels, int channels, int depth, std::uint64_t seed);

  // Returns attention logits (N, 1, H, W).
  Var forward(const Var& f, nn::Mode mode) const;
  void collect(nn::ParameterList& out, const std::string& prefix) const;
  int depth() const { return depth_; }

 private:
  Var level(int lvl, const Var& x, nn::Mode mode) const;

  int depth_ = 0;
  // Index i holds level (depth_ - i).
  std::vector<nn::ConvBnAct> skip_;
  std::vector<nn::ConvBnAct> down_;
  std::vector<nn::ConvBnAct> up_;
  nn::ConvBnAct bottom_;
  nn::Conv2d logits_;
};

struct FauOutput {
  Var y;
  std::optional<Var> alpha;
  Var f;       // feature-branch output
  Var logits;  // attention logits (undefined without attention)
};

// Face Attention Unit: y = skip(x) + alpha * f, alpha = sigmoid(att(f)),
// f = [BN -> PReLU -> Conv3x3] x 2 on x. skip is identity for plain units
// and a scale conv for down (stride 2) / up (nearest x2 + conv) units.
class FaceAttentionUnit {
 public:
  FaceAttentionUnit() = default;
  FaceAttentionUnit(const FauSpec& spec, int attention_channels, std::uint64_t seed);

  FauOutput forward(const Var& x, nn::Mode mode) const;
  void collect(nn::ParameterList& out, const std::string& prefix) const;
  // Test hook: replaces alpha with a constant map.
  void override_attention(std::optional<real> value) { override_ = value; }
  const FauSpec& spec() const { return spec_; }

 private:
  FauSpec spec_{};
  nn::BatchNorm2d pre_bn_;
  nn::PReLU pre_act_;
  nn::Conv2d conv1_;
  nn::BatchNorm2d mid_bn_;
  nn::PReLU mid_act_;
  nn::Conv2d conv2_;
  std::optional<nn::Conv2d> scale_;
  std::optional<Hourglass> attention_;
  std::optional<real> override_;
};

class Generator {
 public:
  explicit Generator(ModelConfig cfg);

  struct Output {
    Var sr;
    std::vector<Var> attention;  // one (N,1,H_j,W_j) map per enabled branch
  };
  // Input is the bicubic-upsampled LR batch at hr_side. Eval mode clamps
  // the output to [0, 1].
  Output forward(const Var& lr_up, nn::Mode mode) const;

  const ModelConfig& config() const { return cfg_; }
  const nn::ParameterList& parameters() const { return params_; }
  std::vector<FaceAttentionUnit>& units() { return units_; }
  void override_attention(std::optional<real> value);

 private:
  ModelConfig cfg_;
  nn::Conv2d head_;
  std::vector<FaceAttentionUnit> units_;
  nn::Conv2d tail_;
  nn::ParameterList params_;
};

struct DiscriminatorConfig {
  int hr_side = 128;
  int base_channels = 64;
  int max_channels = 512;
  int n_layers = 4;
  int num_scales = 3;
  std::uint64_t seed = 1;

  void validate() const;
  static DiscriminatorConfig for_generator(const ModelConfig& g);
  static DiscriminatorConfig tiny(int hr_side);
  bool operator==(const DiscriminatorConfig&) const = default;
};

// One scale of the multi-scale discriminator: n_layers stride-2 4x4 convs
// with LeakyReLU(0.2), then a 3x3 conv to one channel averaged to a score.
class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& cfg, int scale_index, std::uint64_t seed);

  struct Output {
    Var score;                  // (N,1,1,1), unbounded
    std::vector<Var> features;  // post-activation maps of the strided layers
  };
  Output forward(const Var& img) const;

  int input_side() const { return input_side_; }
  const nn::ParameterList& parameters() const { return params_; }
  std::vector<nn::Conv2d>& layers() { return layers_; }
  nn::Conv2d& score_layer() { return score_; }

 private:
  int input_side_;
  std::vector<nn::Conv2d> layers_;
  nn::Conv2d score_;
  nn::ParameterList params_;
};

class MultiScaleDiscriminator {
 public:
  explicit MultiScaleDiscriminator(DiscriminatorConfig cfg);

  // Builds the (k-1)-times halved pyramid of `img` and runs D_k on it.
  std::vector<Discriminator::Output> forward(const Var& img) const;
  // Halving pyramid [img, img/2, img/4, ...] of num_scales levels.
  std::vector<Var> pyramid(const Var& img) const;

  const DiscriminatorConfig& config() const { return cfg_; }
  std::vector<Discriminator>& scales() { return scales_; }
  const std::vector<Discriminator>& scales() const { return scales_; }
  nn::ParameterList parameters() const;

 private:
  DiscriminatorConfig cfg_;
  std::vector<Discriminator> scales_;
};

// Exact number of trainable scalars of the generator built from cfg.
std::int64_t count_parameters(const ModelConfig& cfg);
// Trainable scalars in one attention branch (hourglass + logits conv).
std::int64_t attention_branch_parameters(int in_channels, int attention_channels,
                                         int depth);

}  // namespace sparnet::model
