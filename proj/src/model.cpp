#include "sparnet/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "sparnet/error.hpp"
#include "sparnet/rng.hpp"

namespace sparnet::model {
namespace {

std::uint64_t derive_seed(std::uint64_t seed, const std::string& name) {
  return splitmix64(splitmix64(seed) ^ hash_string(name));
}

bool is_pow2(int v) { return v > 0 && std::has_single_bit(static_cast<unsigned>(v)); }

int log2i(int v) { return std::bit_width(static_cast<unsigned>(v)) - 1; }

int width_at(const ModelConfig& cfg, int side) {
  const int k = log2i(cfg.hr_side / side);
  long w = static_cast<long>(cfg.base_channels) << k;
  return static_cast<int>(std::min<long>(w, cfg.max_channels));
}

std::int64_t conv_params(int in, int out, int k, bool bias) {
  return static_cast<std::int64_t>(in) * out * k * k + (bias ? out : 0);
}

// Conv (no bias) + BN (gamma, beta) + PReLU slope.
std::int64_t cba_params(int in, int out) { return conv_params(in, out, 3, false) + 3 * out; }

void check_input(const Var& x, int channels, int side, const char* who) {
  const Shape& s = x.shape();
  if (s.c != channels || s.h != side || s.w != side) {
    throw ContractError(std::string(who) + ": expected (N," + std::to_string(channels) + "," +
                        std::to_string(side) + "," + std::to_string(side) + ") input, got " +
                        s.str());
  }
}

}  // namespace

std::string to_string(Variant v) { return v == Variant::sparnet ? "sparnet" : "sparnethd"; }

Variant variant_from_string(const std::string& s) {
  if (s == "sparnet") return Variant::sparnet;
  if (s == "sparnethd") return Variant::sparnethd;
  throw ConfigError("unknown model variant '" + s + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (hr_side < 1) fail("hr_side must be positive");
  if (base_channels < 1 || max_channels < base_channels)
    fail("need 1 <= base_channels <= max_channels");
  if (attention_channels < 1) fail("attention_channels must be positive");
  if (n_down < 0 || n_feat < 0 || n_up < 0) fail("FAU counts must be non-negative");
  if (n_down != n_up) fail("n_down must equal n_up so the output matches the input side");
  if (fau_count() < 1) fail("at least one FAU is required");
  if (hr_side % (1 << n_down) != 0 || !is_pow2(hr_side))
    fail("hr_side " + std::to_string(hr_side) + " must be a power of two divisible by 2^n_down");
  if (attention_count < 0 || attention_count > fau_count())
    fail("attention_count " + std::to_string(attention_count) + " outside [0, " +
         std::to_string(fau_count()) + "]");
  if (!is_pow2(bottleneck_size)) fail("bottleneck_size must be a power of two");
  if (attention_count > 0 && bottleneck_side() % bottleneck_size != 0)
    fail("bottleneck_size " + std::to_string(bottleneck_size) +
         " does not divide the smallest attention side " + std::to_string(bottleneck_side()));
}

ModelConfig ModelConfig::sparnet() { return ModelConfig{}; }

ModelConfig ModelConfig::sparnet_v(int attention_count) {
  ModelConfig c;
  c.attention_count = attention_count;
  return c;
}

ModelConfig ModelConfig::sparnet_s(int bottleneck_size) {
  ModelConfig c;
  c.bottleneck_size = bottleneck_size;
  return c;
}

ModelConfig ModelConfig::sparnethd() {
  ModelConfig c;
  c.variant = Variant::sparnethd;
  c.hr_side = 512;
  c.base_channels = 64;
  c.max_channels = 256;
  c.n_down = 4;
  c.n_feat = 10;
  c.n_up = 4;
  c.attention_count = c.fau_count();
  return c;
}

ModelConfig ModelConfig::tiny(int hr_side) {
  ModelConfig c;
  c.hr_side = hr_side;
  c.base_channels = 8;
  c.max_channels = 16;
  c.attention_channels = 8;
  c.n_down = 3;
  c.n_feat = 2;
  c.n_up = 3;
  c.attention_count = c.fau_count();
  c.bottleneck_size = 4;
  while (c.n_down > 0 && (hr_side >> c.n_down) < c.bottleneck_size) {
    --c.n_down;
    --c.n_up;
  }
  c.attention_count = c.fau_count();
  return c;
}

std::vector<FauSpec> fau_layout(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<FauSpec> out;
  const int total = cfg.fau_count();
  const int first_attention = total - cfg.attention_count;
  int side = cfg.hr_side;
  auto depth_for = [&](int s) { return log2i(s / cfg.bottleneck_size); };
  auto push = [&](FauMode mode, int in_side, int out_side) {
    const int idx = static_cast<int>(out.size());
    const bool att = idx >= first_attention;
    if (att && (out_side % cfg.bottleneck_size != 0))
      throw ConfigError("FAU " + std::to_string(idx) + " side " + std::to_string(out_side) +
                        " not divisible by bottleneck_size");
    out.push_back({mode, width_at(cfg, in_side), width_at(cfg, out_side), out_side,
                   att ? depth_for(out_side) : 0, att});
  };
  for (int i = 0; i < cfg.n_down; ++i, side /= 2) push(FauMode::down, side, side / 2);
  for (int i = 0; i < cfg.n_feat; ++i) push(FauMode::plain, side, side);
  for (int i = 0; i < cfg.n_up; ++i, side *= 2) push(FauMode::up, side, side * 2);
  return out;
}

// ---------------------------------------------------------------------------
// Hourglass

Hourglass::Hourglass(int in_channels, int channels, int depth, std::uint64_t seed)
    : depth_(depth) {
  SPARNET_REQUIRE(depth >= 0, "hourglass depth must be non-negative");
  using R = nn::ConvBnAct::Resample;
  for (int i = 0; i < depth; ++i) {
    const int in = i == 0 ? in_channels : channels;
    const std::string tag = "lvl" + std::to_string(i);
    skip_.emplace_back(in, channels, R::none, derive_seed(seed, tag + ".skip"));
    down_.emplace_back(in, channels, R::down, derive_seed(seed, tag + ".down"));
    up_.emplace_back(channels, channels, R::up, derive_seed(seed, tag + ".up"));
  }
  bottom_ = nn::ConvBnAct(depth == 0 ? in_channels : channels, channels, R::none,
                          derive_seed(seed, "bottom"));
  logits_ = nn::Conv2d(channels, 1, 3, 1, 1, true, derive_seed(seed, "logits"), 1.0);
}

Var Hourglass::level(int lvl, const Var& x, nn::Mode mode) const {
  if (lvl == 0) return bottom_.forward(x, mode);
  const std::size_t i = static_cast<std::size_t>(depth_ - lvl);
  Var skip = skip_[i].forward(x, mode);
  Var inner = level(lvl - 1, down_[i].forward(x, mode), mode);
  return ops::add(skip, up_[i].forward(inner, mode));
}

Var Hourglass::forward(const Var& f, nn::Mode mode) const {
  SPARNET_REQUIRE(f.shape().h % (1 << depth_) == 0 && f.shape().w % (1 << depth_) == 0,
                  "hourglass input " + f.shape().str() + " not divisible by 2^depth");
  return logits_.forward(level(depth_, f, mode));
}

void Hourglass::collect(nn::ParameterList& out, const std::string& prefix) const {
  for (int i = 0; i < depth_; ++i) {
    const std::string p = prefix + "lvl" + std::to_string(i) + ".";
    skip_[i].collect(out, p + "skip.");
    down_[i].collect(out, p + "down.");
    up_[i].collect(out, p + "up.");
  }
  bottom_.collect(out, prefix + "bottom.");
  logits_.collect(out, prefix + "logits.");
}

// ---------------------------------------------------------------------------
// Face Attention Unit

FaceAttentionUnit::FaceAttentionUnit(const FauSpec& spec, int attention_channels,
                                     std::uint64_t seed)
    : spec_(spec),
      pre_bn_(spec.in_channels),
      pre_act_(spec.in_channels),
      conv1_(spec.in_channels, spec.out_channels, 3, 1, 1, false, derive_seed(seed, "conv1"),
             nn::prelu_gain()),
      mid_bn_(spec.out_channels),
      mid_act_(spec.out_channels),
      conv2_(spec.out_channels, spec.out_channels, 3, spec.mode == FauMode::down ? 2 : 1, 1, true,
             derive_seed(seed, "conv2"), nn::prelu_gain()) {
  if (spec.mode == FauMode::plain) {
    SPARNET_REQUIRE(spec.in_channels == spec.out_channels,
                    "plain FAU needs equal input and output channels");
  } else {
    scale_ = nn::Conv2d(spec.in_channels, spec.out_channels, 3,
                        spec.mode == FauMode::down ? 2 : 1, 1, true, derive_seed(seed, "scale"),
                        1.0);
  }
  if (spec.attention) {
    attention_ = Hourglass(spec.out_channels, attention_channels, spec.hourglass_depth,
                           derive_seed(seed, "attention"));
  }
}

FauOutput FaceAttentionUnit::forward(const Var& x, nn::Mode mode) const {
  const int in_side = spec_.mode == FauMode::down ? spec_.out_side * 2
                      : spec_.mode == FauMode::up ? spec_.out_side / 2
                                                  : spec_.out_side;
  check_input(x, spec_.in_channels, in_side, "FAU");

  Var h = pre_act_.forward(pre_bn_.forward(x, mode));
  if (spec_.mode == FauMode::up) h = ops::upsample_nearest2x(h);
  h = mid_act_.forward(mid_bn_.forward(conv1_.forward(h), mode));
  Var f = conv2_.forward(h);

  Var skip = x;
  if (scale_) skip = scale_->forward(spec_.mode == FauMode::up ? ops::upsample_nearest2x(x) : x);

  FauOutput out;
  out.f = f;
  if (override_) {
    const Shape& s = f.shape();
    Var alpha(Tensor(Shape{s.n, 1, s.h, s.w}, *override_), false);
    out.alpha = alpha;
    out.y = ops::add(skip, ops::mul_channel_broadcast(f, alpha));
  } else if (attention_) {
    out.logits = attention_->forward(f, mode);
    Var alpha = ops::sigmoid(out.logits);
    out.alpha = alpha;
    out.y = ops::add(skip, ops::mul_channel_broadcast(f, alpha));
  } else {
    out.y = ops::add(skip, f);
  }
  return out;
}

void FaceAttentionUnit::collect(nn::ParameterList& out, const std::string& prefix) const {
  pre_bn_.collect(out, prefix + "pre_bn.");
  pre_act_.collect(out, prefix + "pre_act.");
  conv1_.collect(out, prefix + "conv1.");
  mid_bn_.collect(out, prefix + "mid_bn.");
  mid_act_.collect(out, prefix + "mid_act.");
  conv2_.collect(out, prefix + "conv2.");
  if (scale_) scale_->collect(out, prefix + "scale.");
  if (attention_) attention_->collect(out, prefix + "att.");
}

// ---------------------------------------------------------------------------
// Generator

Generator::Generator(ModelConfig cfg) : cfg_(cfg) {
  const auto layout = fau_layout(cfg_);
  head_ = nn::Conv2d(3, cfg_.base_channels, 3, 1, 1, true, derive_seed(cfg_.seed, "head"), 1.0);
  for (std::size_t j = 0; j < layout.size(); ++j) {
    units_.emplace_back(layout[j], cfg_.attention_channels,
                        derive_seed(cfg_.seed, "fau" + std::to_string(j)));
  }
  tail_ = nn::Conv2d(cfg_.base_channels, 3, 3, 1, 1, true, derive_seed(cfg_.seed, "tail"), 1.0);

  head_.collect(params_, "head.");
  for (std::size_t j = 0; j < units_.size(); ++j)
    units_[j].collect(params_, "fau" + std::to_string(j) + ".");
  tail_.collect(params_, "tail.");
}

Generator::Output Generator::forward(const Var& lr_up, nn::Mode mode) const {
  check_input(lr_up, 3, cfg_.hr_side, "generator");
  Output out;
  Var x = head_.forward(lr_up);
  for (const auto& unit : units_) {
    FauOutput o = unit.forward(x, mode);
    if (o.alpha && unit.spec().attention) out.attention.push_back(*o.alpha);
    x = o.y;
  }
  out.sr = tail_.forward(x);
  if (mode == nn::Mode::eval) {
    Tensor clamped = out.sr.value();
    for (auto& v : clamped.vec()) v = std::clamp(v, 0.0, 1.0);
    out.sr = Var(std::move(clamped), false);
  }
  return out;
}

void Generator::override_attention(std::optional<real> value) {
  for (auto& u : units_) u.override_attention(value);
}

// ---------------------------------------------------------------------------
// Discriminators

void DiscriminatorConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("discriminator config: " + m); };
  if (base_channels < 1 || max_channels < base_channels)
    fail("need 1 <= base_channels <= max_channels");
  if (n_layers < 1) fail("n_layers must be positive");
  if (num_scales < 1) fail("num_scales must be positive");
  const int smallest = hr_side >> (num_scales - 1);
  if (smallest < (1 << n_layers) || smallest % (1 << n_layers) != 0 ||
      hr_side % (1 << (num_scales - 1)) != 0)
    fail("hr_side " + std::to_string(hr_side) + " cannot be halved " +
         std::to_string(num_scales - 1) + " times and then strided " + std::to_string(n_layers) +
         " times");
}

DiscriminatorConfig DiscriminatorConfig::for_generator(const ModelConfig& g) {
  DiscriminatorConfig d;
  d.hr_side = g.hr_side;
  d.seed = splitmix64(g.seed ^ 0xd15c);
  return d;
}

DiscriminatorConfig DiscriminatorConfig::tiny(int hr_side) {
  DiscriminatorConfig d;
  d.hr_side = hr_side;
  d.base_channels = 8;
  d.max_channels = 32;
  return d;
}

Discriminator::Discriminator(const DiscriminatorConfig& cfg, int scale_index, std::uint64_t seed)
    : input_side_(cfg.hr_side >> scale_index) {
  const real gain = std::sqrt(2.0 / (1.0 + 0.2 * 0.2));
  int in = 3;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const int out = std::min(cfg.base_channels << l, cfg.max_channels);
    layers_.emplace_back(in, out, 4, 2, 1, true, derive_seed(seed, "layer" + std::to_string(l)),
                         gain);
    in = out;
  }
  score_ = nn::Conv2d(in, 1, 3, 1, 1, true, derive_seed(seed, "score"), 1.0);
  const std::string prefix = "d" + std::to_string(scale_index) + ".";
  for (std::size_t l = 0; l < layers_.size(); ++l)
    layers_[l].collect(params_, prefix + "layer" + std::to_string(l) + ".");
  score_.collect(params_, prefix + "score.");
}

Discriminator::Output Discriminator::forward(const Var& img) const {
  check_input(img, 3, input_side_, "discriminator");
  Output out;
  Var h = img;
  for (const auto& layer : layers_) {
    h = ops::leaky_relu(layer.forward(h), 0.2);
    out.features.push_back(h);
  }
  out.score = ops::sample_mean(score_.forward(h));
  return out;
}

MultiScaleDiscriminator::MultiScaleDiscriminator(DiscriminatorConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  for (int k = 0; k < cfg_.num_scales; ++k)
    scales_.emplace_back(cfg_, k, derive_seed(cfg_.seed, "scale" + std::to_string(k)));
}

std::vector<Var> MultiScaleDiscriminator::pyramid(const Var& img) const {
  std::vector<Var> levels{img};
  for (int k = 1; k < cfg_.num_scales; ++k) levels.push_back(ops::downsample_half(levels.back()));
  return levels;
}

std::vector<Discriminator::Output> MultiScaleDiscriminator::forward(const Var& img) const {
  const auto levels = pyramid(img);
  std::vector<Discriminator::Output> out;
  for (std::size_t k = 0; k < scales_.size(); ++k) out.push_back(scales_[k].forward(levels[k]));
  return out;
}

nn::ParameterList MultiScaleDiscriminator::parameters() const {
  nn::ParameterList all;
  for (const auto& d : scales_)
    all.insert(all.end(), d.parameters().begin(), d.parameters().end());
  return all;
}

// ---------------------------------------------------------------------------
// Closed-form counts

std::int64_t attention_branch_parameters(int in_channels, int attention_channels, int depth) {
  const int c = attention_channels;
  std::int64_t total = conv_params(c, 1, 3, true);
  if (depth == 0) return total + cba_params(in_channels, c);
  total += 2 * cba_params(in_channels, c) + cba_params(c, c);  // outermost level
  total += static_cast<std::int64_t>(depth - 1) * 3 * cba_params(c, c);
  total += cba_params(c, c);  // bottom
  return total;
}

std::int64_t count_parameters(const ModelConfig& cfg) {
  std::int64_t total = conv_params(3, cfg.base_channels, 3, true) +
                       conv_params(cfg.base_channels, 3, 3, true);
  for (const FauSpec& s : fau_layout(cfg)) {
    total += 3 * s.in_channels;                                 // pre BN + PReLU
    total += conv_params(s.in_channels, s.out_channels, 3, false);
    total += 3 * s.out_channels;                                // mid BN + PReLU
    total += conv_params(s.out_channels, s.out_channels, 3, true);
    if (s.mode != FauMode::plain) total += conv_params(s.in_channels, s.out_channels, 3, true);
    if (s.attention)
      total += attention_branch_parameters(s.out_channels, cfg.attention_channels,
                                           s.hourglass_depth);
  }
  return total;
}

}  // namespace sparnet::model
