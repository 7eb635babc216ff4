#include "sparnet/losses.hpp"

#include <cmath>

#include "sparnet/error.hpp"
#include "sparnet/rng.hpp"

namespace sparnet::losses {

void LossWeights::validate() const {
  for (real w : {pix, adv, fm, pcp})
    if (!(w >= 0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and >= 0");
}

Var pixel_l2(const Var& sr, const Var& hr) { return ops::mean_sq_diff(sr, hr); }

Var pixel_l1(const Var& sr, const Var& hr) { return ops::mean_abs_diff(sr, hr); }

namespace {

Var sum_vars(const std::vector<Var>& terms) {
  Var acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ops::add(acc, terms[i]);
  return acc;
}

}  // namespace

Var hinge_d_loss(std::span<const Var> real_scores, std::span<const Var> fake_scores) {
  SPARNET_REQUIRE(!real_scores.empty() && real_scores.size() == fake_scores.size(),
                  "hinge_d_loss needs matching, non-empty score lists");
  std::vector<Var> terms;
  for (std::size_t k = 0; k < real_scores.size(); ++k) {
    SPARNET_REQUIRE(real_scores[k].shape() == fake_scores[k].shape(),
                    "hinge_d_loss: score shapes differ at scale " + std::to_string(k));
    terms.push_back(ops::relu(ops::add_scalar(ops::scale(real_scores[k], -1.0), 1.0)));
    terms.push_back(ops::relu(ops::add_scalar(fake_scores[k], 1.0)));
  }
  return ops::mean(sum_vars(terms));
}

Var hinge_g_loss(std::span<const Var> fake_scores) {
  SPARNET_REQUIRE(!fake_scores.empty(), "hinge_g_loss needs at least one scale");
  std::vector<Var> terms(fake_scores.begin(), fake_scores.end());
  return ops::mean(ops::scale(sum_vars(terms), -1.0));
}

Var feature_matching(const FeatureStack& sr, const FeatureStack& hr) {
  SPARNET_REQUIRE(sr.size() == hr.size(), "feature_matching: scale count mismatch");
  std::vector<Var> terms;
  for (std::size_t k = 0; k < sr.size(); ++k) {
    SPARNET_REQUIRE(sr[k].size() == hr[k].size(), "feature_matching: layer count mismatch");
    for (std::size_t l = 0; l < sr[k].size(); ++l)
      terms.push_back(ops::mean_abs_diff(sr[k][l], hr[k][l].detach()));
  }
  SPARNET_REQUIRE(!terms.empty(), "feature_matching: no features");
  return sum_vars(terms);
}

// ---------------------------------------------------------------------------
// Perceptual extractor

void ExtractorConfig::validate() const {
  if (stage_channels.empty() || stage_channels.size() != convs_per_stage.size())
    throw ConfigError("extractor: stage_channels and convs_per_stage must match and be non-empty");
  for (int c : stage_channels)
    if (c < 1) throw ConfigError("extractor: channel counts must be positive");
  for (int c : convs_per_stage)
    if (c < 1) throw ConfigError("extractor: every stage needs at least one conv");
  if (input_mean.size() != 3 || input_std.size() != 3)
    throw ConfigError("extractor: input_mean and input_std need 3 entries");
  for (real s : input_std)
    if (!(s > 0)) throw ConfigError("extractor: input_std entries must be positive");
}

ExtractorConfig ExtractorConfig::vgg19() { return ExtractorConfig{}; }

ExtractorConfig ExtractorConfig::small() {
  ExtractorConfig c;
  c.stage_channels = {8, 16, 32, 32, 32};
  c.convs_per_stage = {1, 1, 1, 1, 1};
  return c;
}

nlohmann::json to_json(const ExtractorConfig& c) {
  return {{"stage_channels", c.stage_channels},
          {"convs_per_stage", c.convs_per_stage},
          {"input_mean", c.input_mean},
          {"input_std", c.input_std},
          {"bias", c.bias}};
}

ExtractorConfig extractor_config_from_json(const nlohmann::json& j) {
  ExtractorConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "stage_channels") c.stage_channels = value.get<std::vector<int>>();
      else if (key == "convs_per_stage") c.convs_per_stage = value.get<std::vector<int>>();
      else if (key == "input_mean") c.input_mean = value.get<std::vector<real>>();
      else if (key == "input_std") c.input_std = value.get<std::vector<real>>();
      else if (key == "bias") c.bias = value.get<bool>();
      else throw ConfigError("extractor: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("extractor: ") + e.what());
  }
  c.validate();
  return c;
}

PerceptualExtractor::PerceptualExtractor(ExtractorConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  int in = 3;
  int idx = 0;
  for (std::size_t s = 0; s < cfg_.stage_channels.size(); ++s) {
    for (int i = 0; i < cfg_.convs_per_stage[s]; ++i, ++idx) {
      const std::uint64_t conv_seed = splitmix64(seed ^ hash_string("pcp" + std::to_string(idx)));
      convs_.emplace_back(in, cfg_.stage_channels[s], 3, 1, 1, cfg_.bias, conv_seed,
                          std::sqrt(2.0));
      in = cfg_.stage_channels[s];
    }
  }
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    const std::size_t before = params_.size();
    convs_[i].collect(params_, "conv" + std::to_string(i) + ".");
    for (std::size_t p = before; p < params_.size(); ++p) {
      params_[p].trainable = false;
      params_[p].var.node()->requires_grad = false;
    }
  }
}

PerceptualExtractor PerceptualExtractor::random(ExtractorConfig cfg, std::uint64_t seed) {
  return PerceptualExtractor(std::move(cfg), seed);
}

PerceptualExtractor PerceptualExtractor::load(const std::filesystem::path& path) {
  const auto ckpt = CheckpointContainer::load(path);
  if (!ckpt.metadata().contains("extractor"))
    throw CheckpointError("'" + path.string() + "' has no extractor metadata");
  PerceptualExtractor ex(extractor_config_from_json(ckpt.metadata().at("extractor")), 0);
  ckpt.restore(ex.params_);
  return ex;
}

void PerceptualExtractor::save(const std::filesystem::path& path) const {
  CheckpointContainer ckpt;
  ckpt.metadata()["extractor"] = to_json(cfg_);
  ckpt.store(params_);
  ckpt.save(path);
}

std::vector<Var> PerceptualExtractor::features(const Var& img) const {
  SPARNET_REQUIRE(img.shape().c == 3, "perceptual extractor expects RGB input");
  // Per-channel standardization as a fixed 1x1 convolution.
  Tensor w(Shape{3, 3, 1, 1});
  Tensor b(Shape{1, 3, 1, 1});
  for (int c = 0; c < 3; ++c) {
    w.at(c, c, 0, 0) = 1.0 / cfg_.input_std[c];
    b[c] = -cfg_.input_mean[c] / cfg_.input_std[c];
  }
  Var h = ops::conv2d(img, Var(std::move(w)), Var(std::move(b)), 1, 0);

  std::vector<Var> taps;
  std::size_t idx = 0;
  for (std::size_t s = 0; s < cfg_.stage_channels.size(); ++s) {
    if (s > 0) {
      SPARNET_REQUIRE(h.shape().h % 2 == 0 && h.shape().w % 2 == 0,
                      "perceptual extractor input too small for its stage count");
      h = ops::max_pool2x2(h);
    }
    for (int i = 0; i < cfg_.convs_per_stage[s]; ++i) h = ops::relu(convs_[idx++].forward(h));
    taps.push_back(h);
  }
  return taps;
}

Var perceptual(const Var& sr, const Var& hr, const PerceptualExtractor& extractor) {
  SPARNET_REQUIRE(sr.shape() == hr.shape(), "perceptual: shape mismatch");
  const auto fs = extractor.features(sr);
  std::vector<Var> fh;
  {
    NoGradGuard guard;
    fh = extractor.features(hr.detach());
  }
  std::vector<Var> terms;
  for (std::size_t l = 0; l < fs.size(); ++l) terms.push_back(ops::mean_abs_diff(fs[l], fh[l]));
  return sum_vars(terms);
}

Var total_g_loss(const GeneratorTerms& terms, const LossWeights& w) {
  std::vector<Var> vars;
  std::vector<real> weights;
  auto push = [&](const Var& v, real weight) {
    if (!v.defined()) return;
    SPARNET_REQUIRE(v.value().numel() == 1, "total_g_loss terms must be scalars");
    vars.push_back(v);
    weights.push_back(weight);
  };
  push(terms.pix, w.pix);
  push(terms.adv, w.adv);
  push(terms.fm, w.fm);
  push(terms.pcp, w.pcp);
  if (vars.empty()) return Var(Tensor(Shape{1, 1, 1, 1}, 0.0));
  return ops::weighted_sum(vars, weights);
}

real total_g_loss(real pix, real adv, real fm, real pcp, const LossWeights& w) {
  return w.pix * pix + w.adv * adv + w.fm * fm + w.pcp * pcp;
}

}  // namespace sparnet::losses
