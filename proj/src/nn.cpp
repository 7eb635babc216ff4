#include "sparnet/nn.hpp"

#include <cmath>

#include "sparnet/error.hpp"
#include "sparnet/rng.hpp"

namespace sparnet::nn {

std::int64_t count_trainable(const ParameterList& params) {
  std::int64_t total = 0;
  for (const auto& p : params)
    if (p.trainable) total += static_cast<std::int64_t>(p.var.value().numel());
  return total;
}

void zero_grad(const ParameterList& params) {
  for (const auto& p : params) {
    Var v = p.var;
    v.zero_grad();
  }
}

void set_trainable(const ParameterList& params, bool on) {
  for (const auto& p : params) {
    if (!p.trainable) continue;
    Var v = p.var;
    v.set_requires_grad(on);
  }
}

real prelu_gain() { return std::sqrt(2.0 / (1.0 + 0.25 * 0.25)); }

Conv2d::Conv2d(int in_c, int out_c, int kernel, int stride, int pad, bool bias,
               std::uint64_t seed, real gain)
    : in_c_(in_c), out_c_(out_c), stride_(stride), pad_(pad) {
  SPARNET_REQUIRE(in_c > 0 && out_c > 0 && kernel > 0 && stride > 0 && pad >= 0,
                  "Conv2d: invalid geometry");
  Tensor w(Shape{out_c, in_c, kernel, kernel});
  const real std_dev = gain / std::sqrt(static_cast<real>(in_c) * kernel * kernel);
  Rng rng(seed, 0, "conv.weight");
  for (auto& v : w.vec()) v = std_dev * rng.normal();
  weight_ = Var(std::move(w), true);
  if (bias) bias_ = Var(Tensor(Shape{1, out_c, 1, 1}), true);
}

Var Conv2d::forward(const Var& x) const {
  return ops::conv2d(x, weight_, bias_, stride_, pad_);
}

void Conv2d::collect(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + "weight", weight_, true});
  if (bias_.defined()) out.push_back({prefix + "bias", bias_, true});
}

BatchNorm2d::BatchNorm2d(int channels)
    : gamma_(Tensor(Shape{1, channels, 1, 1}, 1.0), true),
      beta_(Tensor(Shape{1, channels, 1, 1}, 0.0), true),
      running_mean_(Tensor(Shape{1, channels, 1, 1}, 0.0), false),
      running_var_(Tensor(Shape{1, channels, 1, 1}, 1.0), false) {}

Var BatchNorm2d::forward(const Var& x, Mode mode) const {
  ops::BatchNormState state{&running_mean_.node()->value, &running_var_.node()->value};
  return ops::batch_norm(x, gamma_, beta_, state, mode == Mode::train);
}

void BatchNorm2d::collect(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + "gamma", gamma_, true});
  out.push_back({prefix + "beta", beta_, true});
  out.push_back({prefix + "running_mean", running_mean_, false});
  out.push_back({prefix + "running_var", running_var_, false});
}

PReLU::PReLU(int channels, real init) : slope_(Tensor(Shape{1, channels, 1, 1}, init), true) {}

Var PReLU::forward(const Var& x) const { return ops::prelu(x, slope_); }

void PReLU::collect(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + "slope", slope_, true});
}

ConvBnAct::ConvBnAct(int in_c, int out_c, Resample resample, std::uint64_t seed)
    : resample_(resample),
      conv_(in_c, out_c, 3, resample == Resample::down ? 2 : 1, 1, false, seed, prelu_gain()),
      bn_(out_c),
      act_(out_c) {}

Var ConvBnAct::forward(const Var& x, Mode mode) const {
  Var h = resample_ == Resample::up ? ops::upsample_nearest2x(x) : x;
  return act_.forward(bn_.forward(conv_.forward(h), mode));
}

void ConvBnAct::collect(ParameterList& out, const std::string& prefix) const {
  conv_.collect(out, prefix + "conv.");
  bn_.collect(out, prefix + "bn.");
  act_.collect(out, prefix + "act.");
}

}  // namespace sparnet::nn
