#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "sparnet/losses.hpp"
#include "sparnet/model.hpp"
#include "sparnet/optim.hpp"

namespace sparnet {

struct DataConfig {
  // "bicubic": HR images, LR made by bicubic downscaling to lr_side.
  // "degrade": HR images, LR made online by the degradation model.
  // "manifest": pairs produced by `sparnet synth`.
  std::string source = "bicubic";
  std::string hr_dir;
  std::string manifest;
  int lr_side = 16;
  bool augment = true;
  // Held-out images for periodic evaluation; empty = first images of hr_dir.
  std::string eval_dir;
  int eval_count = 32;

  bool operator==(const DataConfig&) const = default;
};

struct TrainConfig {
  int batch_size = 64;
  optim::AdamConfig g_optim{2e-4, 0.9, 0.99};
  optim::AdamConfig d_optim{4e-4, 0.5, 0.99};
  int max_iters = 1000;
  int checkpoint_every = 0;  // 0: only the final checkpoint
  std::uint64_t seed = 0;
  int log_every = 10;
  int eval_every = 500;
  int workers = 1;
  std::string out_dir = "run";

  void validate() const;
  static TrainConfig sparnet();
  static TrainConfig sparnethd();
  bool operator==(const TrainConfig&) const = default;
};

struct ExtractorSpec {
  std::string weights;  // checkpoint path; empty = fixed-random extractor
  losses::ExtractorConfig config = losses::ExtractorConfig::small();
  std::uint64_t seed = 7;
  bool operator==(const ExtractorSpec&) const = default;
};

// Everything a training run needs; parsed from and written to JSON.
struct ExperimentConfig {
  model::ModelConfig model;
  model::DiscriminatorConfig discriminator;
  TrainConfig train;
  losses::LossWeights weights;
  DataConfig data;
  ExtractorSpec extractor;

  void validate() const;
  static ExperimentConfig sparnet();
  static ExperimentConfig sparnethd();
  bool operator==(const ExperimentConfig&) const = default;
};

nlohmann::json to_json(const model::ModelConfig& c);
model::ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const model::DiscriminatorConfig& c);
model::DiscriminatorConfig discriminator_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const optim::AdamConfig& c);
optim::AdamConfig adam_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);
// Missing keys take the defaults of the variant named in model.variant;
// unknown keys are rejected with ConfigError.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

}  // namespace sparnet
