#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparnet/checkpoint.hpp"
#include "sparnet/nn.hpp"

namespace sparnet::losses {

struct LossWeights {
  real pix = 100;
  real adv = 1;
  real fm = 10;
  real pcp = 1;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

// Mean over every element of (sr - hr)^2; with equal per-image sizes this is
// the batch mean of per-image means.
Var pixel_l2(const Var& sr, const Var& hr);
Var pixel_l1(const Var& sr, const Var& hr);

// mean_i sum_k [max(0, 1 - D_k(real_i)) + max(0, 1 + D_k(fake_i))]
Var hinge_d_loss(std::span<const Var> real_scores, std::span<const Var> fake_scores);
// mean_i sum_k -D_k(fake_i)
Var hinge_g_loss(std::span<const Var> fake_scores);

// features[k][l]: layer l of discriminator k.
using FeatureStack = std::vector<std::vector<Var>>;
// sum_k sum_l mean |f_sr - f_hr|; the hr side is used as a constant.
Var feature_matching(const FeatureStack& sr, const FeatureStack& hr);

struct ExtractorConfig {
  std::vector<int> stage_channels{64, 128, 256, 512, 512};
  std::vector<int> convs_per_stage{2, 2, 4, 4, 4};
  std::vector<real> input_mean{0.485, 0.456, 0.406};
  std::vector<real> input_std{0.229, 0.224, 0.225};
  bool bias = true;

  void validate() const;
  // VGG19 layout and ImageNet normalization.
  static ExtractorConfig vgg19();
  // Narrow VGG-shaped stack for CPU training and tests.
  static ExtractorConfig small();
  bool operator==(const ExtractorConfig&) const = default;
};

nlohmann::json to_json(const ExtractorConfig& c);
ExtractorConfig extractor_config_from_json(const nlohmann::json& j);

// Frozen feature network for the perceptual loss: per-stage 3x3 conv + ReLU
// blocks with 2x2 max pooling between stages; the last ReLU of every stage
// is a tap.
class PerceptualExtractor {
 public:
  // Deterministic random weights (test double / no weight file available).
  static PerceptualExtractor random(ExtractorConfig cfg, std::uint64_t seed);
  // Weights from a checkpoint container (metadata "extractor" holds config).
  static PerceptualExtractor load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::vector<Var> features(const Var& img) const;
  const ExtractorConfig& config() const { return cfg_; }
  const nn::ParameterList& parameters() const { return params_; }
  std::vector<nn::Conv2d>& convs() { return convs_; }

 private:
  explicit PerceptualExtractor(ExtractorConfig cfg, std::uint64_t seed);

  ExtractorConfig cfg_;
  std::vector<nn::Conv2d> convs_;
  nn::ParameterList params_;
};

// sum_l mean |f_l(sr) - f_l(hr)| over the extractor taps.
Var perceptual(const Var& sr, const Var& hr, const PerceptualExtractor& extractor);

struct GeneratorTerms {
  Var pix;
  Var adv;
  Var fm;
  Var pcp;
};

// w.pix * pix + w.adv * adv + w.fm * fm + w.pcp * pcp; undefined terms
// count as zero.
Var total_g_loss(const GeneratorTerms& terms, const LossWeights& w);
real total_g_loss(real pix, real adv, real fm, real pcp, const LossWeights& w);

}  // namespace sparnet::losses
