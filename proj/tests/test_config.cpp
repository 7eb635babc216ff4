#include <doctest.h>

#include <fstream>

#include "sparnet/config.hpp"
#include "sparnet/error.hpp"
#include "support/toy_faces.hpp"

using namespace sparnet;
using nlohmann::json;

TEST_CASE("presets carry the reference hyperparameters") {
  const auto s = ExperimentConfig::sparnet();
  CHECK(s.train.batch_size == 64);
  CHECK(s.train.g_optim == optim::AdamConfig{2e-4, 0.9, 0.99});
  CHECK(s.model.attention_count == 16);
  CHECK(s.model.bottleneck_size == 4);
  CHECK(s.model.fau_count() == 16);
  const auto hd = ExperimentConfig::sparnethd();
  CHECK(hd.train.batch_size == 2);
  CHECK(hd.train.g_optim == optim::AdamConfig{1e-4, 0.5, 0.99});
  CHECK(hd.train.d_optim == optim::AdamConfig{4e-4, 0.5, 0.99});
  CHECK(hd.model.hr_side == 512);
  CHECK(hd.discriminator.num_scales == 3);
  CHECK(hd.weights == losses::LossWeights{100, 1, 10, 1});
  CHECK_NOTHROW(s.validate());
  CHECK_NOTHROW(hd.validate());
}

TEST_CASE("parse, serialize, parse round-trips") {
  for (ExperimentConfig c : {ExperimentConfig::sparnet(), ExperimentConfig::sparnethd()}) {
    c.model.seed = 12345678901234ULL;
    c.train.g_optim.lr = 3.3e-5;
    c.weights.fm = 2.5;
    c.data.hr_dir = "faces";
    c.extractor.config.stage_channels = {4, 8};
    c.extractor.config.convs_per_stage = {1, 2};
    const json j = to_json(c);
    const ExperimentConfig back = experiment_config_from_json(j);
    CHECK(back == c);
    CHECK(to_json(back) == j);
    CHECK(experiment_config_from_json(json::parse(j.dump())) == c);
  }
}

TEST_CASE("missing keys take the defaults of the named variant") {
  const auto hd = experiment_config_from_json(json{{"model", {{"variant", "sparnethd"}}}});
  CHECK(hd == ExperimentConfig::sparnethd());
  const auto s = experiment_config_from_json(json{{"train", {{"max_iters", 7}}}});
  CHECK(s.train.max_iters == 7);
  CHECK(s.model == model::ModelConfig::sparnet());
  // The discriminator follows the generator side unless set.
  const auto small = experiment_config_from_json(
      json{{"model", {{"hr_side", 64}, {"n_down", 2}, {"n_up", 2}, {"attention_count", 14}}}});
  CHECK(small.discriminator.hr_side == 64);
}

TEST_CASE("bad configs are rejected") {
  CHECK_THROWS_AS(experiment_config_from_json(json{{"modle", json::object()}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(json{{"train", {{"lr", 1}}}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(json{{"train", {{"batch_size", "many"}}}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(json{{"model", {{"variant", "other"}}}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(json{{"train", {{"g_optim", {{"lr", 0}}}}}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(json{{"train", {{"g_optim", {{"beta1", 1.0}}}}}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(json{{"weights", {{"adv", -1}}}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(json{{"data", {{"source", "web"}}}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(json{{"model", {{"bottleneck_size", 32}}}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(json::array()), ConfigError);
}

TEST_CASE("config files") {
  const auto dir = testing::scratch_dir("config_files");
  {
    std::ofstream(dir / "ok.json") << to_json(ExperimentConfig::sparnethd()).dump(2);
    std::ofstream(dir / "bad.json") << "{ not json";
  }
  CHECK(load_experiment_config(dir / "ok.json") == ExperimentConfig::sparnethd());
  CHECK_THROWS_AS(load_experiment_config(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(load_experiment_config(dir / "missing.json"), IoError);
}
