#include <doctest.h>

#include <cmath>
#include <fstream>

#include "sparnet/checkpoint.hpp"
#include "sparnet/config.hpp"
#include "sparnet/error.hpp"
#include "sparnet/model.hpp"
#include "sparnet/rng.hpp"
#include "sparnet/trainkit.hpp"
#include "support/gradcheck.hpp"
#include "support/toy_faces.hpp"

using namespace sparnet;
using namespace sparnet::model;

namespace {

Tensor rand_tensor(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(s);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-1, 1);
  return t;
}

std::int64_t counted_with_prefix(const nn::ParameterList& ps, const std::string& needle) {
  std::int64_t n = 0;
  for (const auto& p : ps)
    if (p.trainable && p.name.find(needle) != std::string::npos)
      n += static_cast<std::int64_t>(p.var.value().numel());
  return n;
}

ModelConfig small_config() {
  ModelConfig c = ModelConfig::tiny(32);
  c.base_channels = 4;
  c.max_channels = 8;
  c.attention_channels = 4;
  c.n_down = 2;
  c.n_up = 2;
  c.n_feat = 1;
  c.attention_count = c.fau_count();
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("reference SPARNet parameter count") {
  const ModelConfig cfg = ModelConfig::sparnet();
  const std::int64_t n = count_parameters(cfg);
  CHECK(std::abs(n / 9.86e6 - 1.0) <= 0.15);
  Generator g(cfg);
  CHECK(nn::count_trainable(g.parameters()) == n);
}

TEST_CASE("closed-form count matches the built model across configs") {
  for (ModelConfig cfg : {ModelConfig::tiny(128), ModelConfig::sparnet_v(0), ModelConfig::sparnet_v(1),
                          ModelConfig::sparnet_s(16), small_config()}) {
    Generator g(cfg);
    CHECK(nn::count_trainable(g.parameters()) == count_parameters(cfg));
  }
}

TEST_CASE("single plain FAU count, hand-summed") {
  // C = 64 at 16x16 with M = 4: hourglass depth 2.
  // feature branch: BN+PReLU 192, conv1 36864, BN+PReLU 192, conv2 36864+64
  // attention: 7 Conv-BN-PReLU blocks of 36864+192, logits 576+1
  const std::int64_t hand = 192 + 36864 + 192 + 36928 + 7 * (36864 + 192) + 577;
  CHECK(hand == 334145);
  FaceAttentionUnit fau(FauSpec{FauMode::plain, 64, 64, 16, 2, true}, 64, 1);
  nn::ParameterList ps;
  fau.collect(ps, "");
  CHECK(nn::count_trainable(ps) == hand);
  CHECK(attention_branch_parameters(64, 64, 2) == 7 * (36864 + 192) + 577);
}

TEST_CASE("attention branches add their own parameters only") {
  const ModelConfig v16 = ModelConfig::sparnet_v(16), v0 = ModelConfig::sparnet_v(0);
  std::int64_t branches = 0;
  for (const auto& s : fau_layout(v16))
    branches += attention_branch_parameters(s.out_channels, v16.attention_channels, s.hourglass_depth);
  CHECK(count_parameters(v16) - count_parameters(v0) == branches);
  Generator g(v16);
  CHECK(counted_with_prefix(g.parameters(), ".att.") == branches);
}

TEST_CASE("FAU with forced attention reduces to the residual identities") {
  FaceAttentionUnit fau(FauSpec{FauMode::plain, 4, 4, 8, 1, true}, 4, 9);
  const Var x(rand_tensor({2, 4, 8, 8}, 1));
  for (nn::Mode mode : {nn::Mode::train, nn::Mode::eval}) {
    fau.override_attention(0.0);
    const auto zero = fau.forward(x, mode);
    CHECK(zero.y.value().vec() == x.value().vec());
    fau.override_attention(1.0);
    const auto one = fau.forward(x, mode);
    for (std::size_t i = 0; i < x.value().numel(); ++i)
      REQUIRE(one.y.value()[i] == x.value()[i] + one.f.value()[i]);
  }
}

TEST_CASE("attention maps lie strictly inside (0, 1)") {
  FaceAttentionUnit fau(FauSpec{FauMode::plain, 4, 4, 8, 1, true}, 4, 10);
  Tensor big = rand_tensor({2, 4, 8, 8}, 2);
  for (real& v : big.vec()) v *= 5;
  const auto out = fau.forward(Var(big), nn::Mode::train);
  REQUIRE(out.alpha.has_value());
  CHECK(out.alpha->shape() == Shape{2, 1, 8, 8});
  for (real a : out.alpha->value().vec()) {
    CHECK(a > 0);
    CHECK(a < 1);
  }
}

TEST_CASE("scale FAUs resample both branches") {
  FaceAttentionUnit down(FauSpec{FauMode::down, 4, 8, 4, 0, true}, 4, 11);
  const auto d = down.forward(Var(rand_tensor({1, 4, 8, 8}, 3)), nn::Mode::train);
  CHECK(d.y.shape() == Shape{1, 8, 4, 4});
  CHECK(d.alpha->shape() == Shape{1, 1, 4, 4});
  FaceAttentionUnit up(FauSpec{FauMode::up, 8, 4, 8, 1, true}, 4, 12);
  const auto u = up.forward(d.y, nn::Mode::train);
  CHECK(u.y.shape() == Shape{1, 4, 8, 8});
  CHECK(u.alpha->shape() == Shape{1, 1, 8, 8});
  CHECK_THROWS_AS(up.forward(Var(rand_tensor({1, 8, 8, 8}, 4)), nn::Mode::train), ContractError);
}

TEST_CASE("generator shapes and attention maps") {
  const ModelConfig cfg = small_config();
  Generator g(cfg);
  const auto layout = fau_layout(cfg);
  const auto out = g.forward(Var(rand_tensor({2, 3, 32, 32}, 5)), nn::Mode::train);
  CHECK(out.sr.shape() == Shape{2, 3, 32, 32});
  REQUIRE(out.attention.size() == layout.size());
  for (std::size_t j = 0; j < layout.size(); ++j)
    CHECK(out.attention[j].shape() == Shape{2, 1, layout[j].out_side, layout[j].out_side});
  // Sides go 32 -> 16 -> 8 -> 8 -> 16 -> 32.
  CHECK(layout[1].out_side == cfg.bottleneck_side());
  CHECK(layout.back().out_side == 32);
  CHECK_THROWS_AS(g.forward(Var(rand_tensor({1, 3, 16, 16}, 6)), nn::Mode::eval), ContractError);
}

TEST_CASE("reference generator produces 16 maps at 128") {
  Generator g(ModelConfig::sparnet());
  NoGradGuard guard;
  const auto out = g.forward(Var(rand_tensor({1, 3, 128, 128}, 7)), nn::Mode::eval);
  CHECK(out.sr.shape() == Shape{1, 3, 128, 128});
  CHECK(out.attention.size() == 16);
}

TEST_CASE("baseline generator has no attention maps") {
  ModelConfig cfg = small_config();
  cfg.attention_count = 0;
  Generator g(cfg);
  CHECK(g.forward(Var(rand_tensor({1, 3, 32, 32}, 8)), nn::Mode::train).attention.empty());
}

TEST_CASE("eval forward is deterministic and clamped") {
  Generator g(small_config());
  const Var x(rand_tensor({2, 3, 32, 32}, 9));
  const auto a = g.forward(x, nn::Mode::eval), b = g.forward(x, nn::Mode::eval);
  CHECK(a.sr.value().vec() == b.sr.value().vec());
  for (real v : a.sr.value().vec()) {
    CHECK(v >= 0);
    CHECK(v <= 1);
  }
}

TEST_CASE("same seed gives identical parameters, another seed does not") {
  ModelConfig c = small_config();
  Generator a(c), b(c);
  c.seed = 4;
  Generator other(c);
  bool all_same = true, any_diff = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    all_same &= a.parameters()[i].var.value().vec() == b.parameters()[i].var.value().vec();
    any_diff |= a.parameters()[i].var.value().vec() != other.parameters()[i].var.value().vec();
  }
  CHECK(all_same);
  CHECK(any_diff);
}

TEST_CASE("invalid configs are rejected at build time") {
  ModelConfig c = small_config();
  c.bottleneck_size = 16;  // bottleneck side is 8
  CHECK_THROWS_AS(Generator{c}, ConfigError);
  c = small_config();
  c.attention_count = c.fau_count() + 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.n_up = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("ablation presets differ in maps and bottleneck") {
  std::vector<std::pair<ModelConfig, std::size_t>> v = {
      {ModelConfig::sparnet_v(0), 0}, {ModelConfig::sparnet_v(1), 1}, {ModelConfig::sparnet_v(16), 16}};
  for (const auto& [cfg, maps] : v) {
    std::size_t n = 0;
    for (const auto& s : fau_layout(cfg)) n += s.attention;
    CHECK(n == maps);
  }
  for (int m : {2, 4, 8, 16}) {
    const auto layout = fau_layout(ModelConfig::sparnet_s(m));
    for (const auto& s : layout)
      if (s.attention) CHECK((s.out_side >> s.hourglass_depth) == m);
  }
}

TEST_CASE("checkpoint round trip reproduces outputs bit-identically") {
  const auto dir = testing::scratch_dir("model_ckpt");
  Generator g(small_config());
  // Move batch-norm running stats away from their defaults first.
  g.forward(Var(rand_tensor({2, 3, 32, 32}, 10)), nn::Mode::train);
  trainkit::save_generator(g, dir / "g.ckpt");
  const Generator back = trainkit::load_generator(dir / "g.ckpt");
  const Var x(rand_tensor({1, 3, 32, 32}, 11));
  CHECK(g.forward(x, nn::Mode::eval).sr.value().vec() ==
        back.forward(x, nn::Mode::eval).sr.value().vec());
  CHECK(CheckpointContainer::load(dir / "g.ckpt").fingerprint() ==
        config_fingerprint(to_json(small_config())));
}

TEST_CASE("fingerprint mismatch is a load error") {
  const auto dir = testing::scratch_dir("model_fp");
  Generator g(small_config());
  trainkit::save_generator(g, dir / "g.ckpt");
  auto ckpt = CheckpointContainer::load(dir / "g.ckpt");
  ckpt.metadata()["config"]["n_feat"] = 2;
  ckpt.save(dir / "tampered.ckpt");
  CHECK_THROWS_AS(trainkit::load_generator(dir / "tampered.ckpt"), CheckpointError);

  // A trainer for another config refuses the file too.
  ExperimentConfig other = ExperimentConfig::sparnet();
  other.model = small_config();
  other.model.seed = 99;
  other.train.batch_size = 1;
  trainkit::BicubicPairSource src(testing::toy_faces(1, 32, 1), {"a"}, 8);
  trainkit::SparnetTrainer t(other, src);
  CHECK_THROWS_AS(t.load(dir / "g.ckpt"), CheckpointError);
}

TEST_CASE("checkpoint container rejects damaged files") {
  const auto dir = testing::scratch_dir("model_bad");
  CheckpointContainer c;
  c.put("a", Tensor({1, 2, 1, 1}, 1.5));
  c.save(dir / "ok.ckpt");
  const auto back = CheckpointContainer::load(dir / "ok.ckpt");
  CHECK(back.get("a").vec() == std::vector<real>{1.5, 1.5});
  std::filesystem::resize_file(dir / "ok.ckpt", std::filesystem::file_size(dir / "ok.ckpt") - 3);
  CHECK_THROWS_AS(CheckpointContainer::load(dir / "ok.ckpt"), CheckpointError);
  {
    std::ofstream(dir / "junk.ckpt") << "SPARNOPE";
  }
  CHECK_THROWS_AS(CheckpointContainer::load(dir / "junk.ckpt"), CheckpointError);
  CHECK_THROWS(CheckpointContainer::load(dir / "missing.ckpt"));
}

TEST_CASE("discriminator basics") {
  DiscriminatorConfig cfg = DiscriminatorConfig::tiny(64);
  cfg.num_scales = 2;
  cfg.n_layers = 3;
  MultiScaleDiscriminator d(cfg);
  const Var img(rand_tensor({2, 3, 64, 64}, 12));
  const auto a = d.forward(img), b = d.forward(img);
  REQUIRE(a.size() == 2);
  CHECK(a[0].score.shape() == Shape{2, 1, 1, 1});
  CHECK(a[1].features.back().shape().h == 64 / 2 / 8);
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t l = 0; l < a[k].features.size(); ++l)
      CHECK(a[k].features[l].value().vec() == b[k].features[l].value().vec());

  for (auto& scale : d.scales()) {
    for (const auto& p : scale.parameters()) Var(p.var).mutable_value().fill(0);
  }
  for (const auto& o : d.forward(img)) CHECK(o.score.value()[0] == 0);
  CHECK_THROWS_AS(d.scales()[1].forward(img), ContractError);
}

TEST_CASE("full-size D1 on 512 input reaches side 32") {
  Discriminator d1(DiscriminatorConfig::tiny(512), 0, 1);
  NoGradGuard guard;
  const auto out = d1.forward(Var(Tensor({1, 3, 512, 512}, 0.5)));
  REQUIRE(out.features.size() == 4);
  CHECK(out.features.back().shape().h == 32);
  CHECK(out.features.back().shape().w == 32);
}

TEST_CASE("FAU and generator gradients match central differences") {
  const FaceAttentionUnit fau(FauSpec{FauMode::down, 3, 4, 4, 0, true}, 3, 2);
  nn::ParameterList vars;
  fau.collect(vars, "fau.");
  const Var x(rand_tensor({2, 3, 8, 8}, 4), true);
  vars.push_back({"x", x});
  const Tensor w = rand_tensor({2, 4, 4, 4}, 5);
  auto rep = testing::grad_check([&] { return ops::mean_sq_diff(fau.forward(x, nn::Mode::train).y, Var(w)); },
                                 vars);
  INFO(rep.worst);
  CHECK(rep.max_rel_error < 1e-4);

  const Generator g(small_config());
  const Tensor in = rand_tensor({2, 3, 32, 32}, 6), probe = rand_tensor({2, 1, 32, 32}, 7);
  rep = testing::grad_check(
      [&] { return ops::mean(ops::mul_channel_broadcast(g.forward(Var(in), nn::Mode::train).sr, Var(probe))); },
      g.parameters(), 1e-5, 4);
  INFO(rep.worst);
  CHECK(rep.max_rel_error < 1e-4);
  CHECK(rep.checked > 100);
}
