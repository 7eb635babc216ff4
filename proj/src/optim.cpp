#include "sparnet/optim.hpp"

#include <cmath>

#include "sparnet/error.hpp"

namespace sparnet::optim {

void AdamConfig::validate() const {
  if (!(lr >= 0) || !std::isfinite(lr)) throw ConfigError("adam: lr must be finite and >= 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    throw ConfigError("adam: betas must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("adam: eps must be positive");
  if (!(grad_clip >= 0)) throw ConfigError("adam: grad_clip must be >= 0");
}

Adam::Adam(const nn::ParameterList& params, AdamConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  for (const auto& p : params) {
    if (!p.trainable) continue;
    slots_.push_back({p.name, p.var, Tensor(p.var.shape()), Tensor(p.var.shape())});
  }
}

void Adam::zero_grad() {
  for (auto& s : slots_) s.param.zero_grad();
}

void Adam::step() {
  ++steps_;
  real clip_scale = 1;
  if (cfg_.grad_clip > 0) {
    real sq = 0;
    for (const auto& s : slots_)
      if (s.param.has_grad())
        for (real g : s.param.grad().vec()) sq += g * g;
    const real norm = std::sqrt(sq);
    if (norm > cfg_.grad_clip) clip_scale = cfg_.grad_clip / norm;
  }
  const real t = static_cast<real>(steps_);
  const real c1 = 1 - std::pow(cfg_.beta1, t);
  const real c2 = 1 - std::pow(cfg_.beta2, t);
  for (auto& s : slots_) {
    if (!s.param.has_grad()) continue;
    const Tensor& g = s.param.grad();
    Tensor& w = s.param.node()->value;
    for (std::size_t i = 0; i < w.numel(); ++i) {
      const real gi = g[i] * clip_scale;
      s.m[i] = cfg_.beta1 * s.m[i] + (1 - cfg_.beta1) * gi;
      s.v[i] = cfg_.beta2 * s.v[i] + (1 - cfg_.beta2) * gi * gi;
      const real mhat = s.m[i] / c1;
      const real vhat = s.v[i] / c2;
      w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void Adam::save_state(CheckpointContainer& ckpt, const std::string& prefix) const {
  ckpt.metadata()[prefix + "steps"] = steps_;
  for (const auto& s : slots_) {
    ckpt.put(prefix + "m." + s.name, s.m);
    ckpt.put(prefix + "v." + s.name, s.v);
  }
}

void Adam::load_state(const CheckpointContainer& ckpt, const std::string& prefix) {
  if (!ckpt.metadata().contains(prefix + "steps"))
    throw CheckpointError("checkpoint has no optimizer state '" + prefix + "'");
  steps_ = ckpt.metadata().at(prefix + "steps").get<std::int64_t>();
  for (auto& s : slots_) {
    const Tensor& m = ckpt.get(prefix + "m." + s.name);
    const Tensor& v = ckpt.get(prefix + "v." + s.name);
    if (!(m.shape() == s.m.shape()) || !(v.shape() == s.v.shape()))
      throw CheckpointError("optimizer state shape mismatch for '" + s.name + "'");
    s.m = m;
    s.v = v;
  }
}

}  // namespace sparnet::optim
