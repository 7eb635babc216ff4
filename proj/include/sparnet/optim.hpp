#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sparnet/checkpoint.hpp"
#include "sparnet/nn.hpp"

namespace sparnet::optim {

struct AdamConfig {
  real lr = 2e-4;
  real beta1 = 0.9;
  real beta2 = 0.99;
  real eps = 1e-8;
  // Global gradient-norm clip; 0 disables.
  real grad_clip = 0;

  void validate() const;
  bool operator==(const AdamConfig&) const = default;
};

// Adam with bias correction over the trainable entries of a parameter list.
// Parameters without an accumulated gradient are skipped for that step.
class Adam {
 public:
  Adam(const nn::ParameterList& params, AdamConfig cfg);

  void step();
  void zero_grad();
  std::int64_t steps() const { return steps_; }
  const AdamConfig& config() const { return cfg_; }

  void save_state(CheckpointContainer& ckpt, const std::string& prefix) const;
  void load_state(const CheckpointContainer& ckpt, const std::string& prefix);

 private:
  struct Slot {
    std::string name;
    Var param;
    Tensor m;
    Tensor v;
  };
  AdamConfig cfg_;
  std::vector<Slot> slots_;
  std::int64_t steps_ = 0;
};

}  // namespace sparnet::optim
