#include "sparnet/config.hpp"

#include <fstream>
#include <set>

#include "sparnet/error.hpp"

namespace sparnet {
namespace {

using nlohmann::json;

// Applies `setters` for every key of object `j` under `section`, rejecting
// unknown keys.
template <typename Fn>
void overlay(const json& j, const std::string& section, Fn&& apply) {
  if (!j.is_object()) throw ConfigError(section + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    try {
      known = apply(key, value);
    } catch (const json::exception& e) {
      throw ConfigError(section + "." + key + ": " + e.what());
    }
    if (!known) throw ConfigError(section + ": unknown key '" + key + "'");
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (max_iters < 0) throw ConfigError("train.max_iters must be >= 0");
  if (checkpoint_every < 0 || log_every < 0 || eval_every < 0)
    throw ConfigError("train cadences must be >= 0");
  if (workers < 1) throw ConfigError("train.workers must be >= 1");
  g_optim.validate();
  d_optim.validate();
  if (!(g_optim.lr > 0) || !(d_optim.lr > 0)) throw ConfigError("train learning rates must be > 0");
}

TrainConfig TrainConfig::sparnet() { return TrainConfig{}; }

TrainConfig TrainConfig::sparnethd() {
  TrainConfig t;
  t.batch_size = 2;
  t.g_optim = {1e-4, 0.5, 0.99};
  t.d_optim = {4e-4, 0.5, 0.99};
  t.max_iters = 100000;
  return t;
}

void ExperimentConfig::validate() const {
  model.validate();
  // Only SPARNetHD trains a discriminator.
  if (model.variant == model::Variant::sparnethd) {
    discriminator.validate();
    if (discriminator.hr_side != model.hr_side)
      throw ConfigError("discriminator.hr_side must equal model.hr_side");
  }
  train.validate();
  weights.validate();
  static const std::set<std::string> sources{"bicubic", "degrade", "manifest"};
  if (!sources.count(data.source))
    throw ConfigError("data.source must be bicubic, degrade or manifest, got '" + data.source + "'");
  if (data.lr_side < 1 || data.lr_side > model.hr_side)
    throw ConfigError("data.lr_side must lie in [1, model.hr_side]");
  if (data.eval_count < 0) throw ConfigError("data.eval_count must be >= 0");
  extractor.config.validate();
}

ExperimentConfig ExperimentConfig::sparnet() {
  ExperimentConfig c;
  c.model = model::ModelConfig::sparnet();
  c.discriminator = model::DiscriminatorConfig::for_generator(c.model);
  c.train = TrainConfig::sparnet();
  return c;
}

ExperimentConfig ExperimentConfig::sparnethd() {
  ExperimentConfig c;
  c.model = model::ModelConfig::sparnethd();
  c.discriminator = model::DiscriminatorConfig::for_generator(c.model);
  c.train = TrainConfig::sparnethd();
  c.data.source = "degrade";
  return c;
}

json to_json(const model::ModelConfig& c) {
  return {{"variant", model::to_string(c.variant)},
          {"hr_side", c.hr_side},
          {"base_channels", c.base_channels},
          {"max_channels", c.max_channels},
          {"attention_channels", c.attention_channels},
          {"n_down", c.n_down},
          {"n_feat", c.n_feat},
          {"n_up", c.n_up},
          {"attention_count", c.attention_count},
          {"bottleneck_size", c.bottleneck_size},
          {"seed", c.seed}};
}

namespace {

void apply_model(model::ModelConfig& c, const json& j) {
  overlay(j, "model", [&](const std::string& k, const json& v) {
    if (k == "variant") c.variant = model::variant_from_string(v.get<std::string>());
    else if (k == "hr_side") c.hr_side = v.get<int>();
    else if (k == "base_channels") c.base_channels = v.get<int>();
    else if (k == "max_channels") c.max_channels = v.get<int>();
    else if (k == "attention_channels") c.attention_channels = v.get<int>();
    else if (k == "n_down") c.n_down = v.get<int>();
    else if (k == "n_feat") c.n_feat = v.get<int>();
    else if (k == "n_up") c.n_up = v.get<int>();
    else if (k == "attention_count") c.attention_count = v.get<int>();
    else if (k == "bottleneck_size") c.bottleneck_size = v.get<int>();
    else if (k == "seed") c.seed = v.get<std::uint64_t>();
    else return false;
    return true;
  });
}

void apply_discriminator(model::DiscriminatorConfig& c, const json& j) {
  overlay(j, "discriminator", [&](const std::string& k, const json& v) {
    if (k == "hr_side") c.hr_side = v.get<int>();
    else if (k == "base_channels") c.base_channels = v.get<int>();
    else if (k == "max_channels") c.max_channels = v.get<int>();
    else if (k == "n_layers") c.n_layers = v.get<int>();
    else if (k == "num_scales") c.num_scales = v.get<int>();
    else if (k == "seed") c.seed = v.get<std::uint64_t>();
    else return false;
    return true;
  });
}

void apply_adam(optim::AdamConfig& c, const json& j, const std::string& section) {
  overlay(j, section, [&](const std::string& k, const json& v) {
    if (k == "lr") c.lr = v.get<real>();
    else if (k == "beta1") c.beta1 = v.get<real>();
    else if (k == "beta2") c.beta2 = v.get<real>();
    else if (k == "eps") c.eps = v.get<real>();
    else if (k == "grad_clip") c.grad_clip = v.get<real>();
    else return false;
    return true;
  });
}

}  // namespace

model::ModelConfig model_config_from_json(const json& j) {
  model::ModelConfig c;
  if (j.contains("variant") && j.at("variant") == "sparnethd") c = model::ModelConfig::sparnethd();
  apply_model(c, j);
  return c;
}

json to_json(const model::DiscriminatorConfig& c) {
  return {{"hr_side", c.hr_side},         {"base_channels", c.base_channels},
          {"max_channels", c.max_channels}, {"n_layers", c.n_layers},
          {"num_scales", c.num_scales},   {"seed", c.seed}};
}

model::DiscriminatorConfig discriminator_config_from_json(const json& j) {
  model::DiscriminatorConfig c;
  apply_discriminator(c, j);
  return c;
}

json to_json(const optim::AdamConfig& c) {
  return {{"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"grad_clip", c.grad_clip}};
}

optim::AdamConfig adam_config_from_json(const json& j) {
  optim::AdamConfig c;
  apply_adam(c, j, "adam");
  return c;
}

json to_json(const ExperimentConfig& c) {
  const auto& t = c.train;
  const auto& d = c.data;
  return {{"model", to_json(c.model)},
          {"discriminator", to_json(c.discriminator)},
          {"train",
           {{"batch_size", t.batch_size},
            {"g_optim", to_json(t.g_optim)},
            {"d_optim", to_json(t.d_optim)},
            {"max_iters", t.max_iters},
            {"checkpoint_every", t.checkpoint_every},
            {"seed", t.seed},
            {"log_every", t.log_every},
            {"eval_every", t.eval_every},
            {"workers", t.workers},
            {"out_dir", t.out_dir}}},
          {"weights",
           {{"pix", c.weights.pix}, {"adv", c.weights.adv}, {"fm", c.weights.fm},
            {"pcp", c.weights.pcp}}},
          {"data",
           {{"source", d.source},
            {"hr_dir", d.hr_dir},
            {"manifest", d.manifest},
            {"lr_side", d.lr_side},
            {"augment", d.augment},
            {"eval_dir", d.eval_dir},
            {"eval_count", d.eval_count}}},
          {"extractor",
           {{"weights", c.extractor.weights},
            {"config", losses::to_json(c.extractor.config)},
            {"seed", c.extractor.seed}}}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  bool hd = false;
  if (j.contains("model") && j["model"].is_object() && j["model"].contains("variant"))
    hd = model::variant_from_string(j["model"]["variant"].get<std::string>()) ==
         model::Variant::sparnethd;
  ExperimentConfig c = hd ? ExperimentConfig::sparnethd() : ExperimentConfig::sparnet();
  bool explicit_disc_side = false;

  overlay(j, "config", [&](const std::string& key, const json& v) {
    if (key == "model") {
      apply_model(c.model, v);
    } else if (key == "discriminator") {
      explicit_disc_side = v.contains("hr_side");
      apply_discriminator(c.discriminator, v);
    } else if (key == "train") {
      overlay(v, "train", [&](const std::string& k, const json& x) {
        auto& t = c.train;
        if (k == "batch_size") t.batch_size = x.get<int>();
        else if (k == "g_optim") apply_adam(t.g_optim, x, "train.g_optim");
        else if (k == "d_optim") apply_adam(t.d_optim, x, "train.d_optim");
        else if (k == "max_iters") t.max_iters = x.get<int>();
        else if (k == "checkpoint_every") t.checkpoint_every = x.get<int>();
        else if (k == "seed") t.seed = x.get<std::uint64_t>();
        else if (k == "log_every") t.log_every = x.get<int>();
        else if (k == "eval_every") t.eval_every = x.get<int>();
        else if (k == "workers") t.workers = x.get<int>();
        else if (k == "out_dir") t.out_dir = x.get<std::string>();
        else return false;
        return true;
      });
    } else if (key == "weights") {
      overlay(v, "weights", [&](const std::string& k, const json& x) {
        if (k == "pix") c.weights.pix = x.get<real>();
        else if (k == "adv") c.weights.adv = x.get<real>();
        else if (k == "fm") c.weights.fm = x.get<real>();
        else if (k == "pcp") c.weights.pcp = x.get<real>();
        else return false;
        return true;
      });
    } else if (key == "data") {
      overlay(v, "data", [&](const std::string& k, const json& x) {
        auto& d = c.data;
        if (k == "source") d.source = x.get<std::string>();
        else if (k == "hr_dir") d.hr_dir = x.get<std::string>();
        else if (k == "manifest") d.manifest = x.get<std::string>();
        else if (k == "lr_side") d.lr_side = x.get<int>();
        else if (k == "augment") d.augment = x.get<bool>();
        else if (k == "eval_dir") d.eval_dir = x.get<std::string>();
        else if (k == "eval_count") d.eval_count = x.get<int>();
        else return false;
        return true;
      });
    } else if (key == "extractor") {
      overlay(v, "extractor", [&](const std::string& k, const json& x) {
        if (k == "weights") c.extractor.weights = x.get<std::string>();
        else if (k == "config") c.extractor.config = losses::extractor_config_from_json(x);
        else if (k == "seed") c.extractor.seed = x.get<std::uint64_t>();
        else return false;
        return true;
      });
    } else {
      return false;
    }
    return true;
  });
  // The discriminator follows the generator side unless set explicitly.
  if (!explicit_disc_side) c.discriminator.hr_side = c.model.hr_side;
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  return experiment_config_from_json(j);
}

}  // namespace sparnet
