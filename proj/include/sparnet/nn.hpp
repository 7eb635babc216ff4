#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sparnet/autograd.hpp"

namespace sparnet::nn {

enum class Mode { train, eval };

// One named array owned by a module: trainable parameter or state buffer
// (batch-norm running statistics).
struct NamedVar {
  std::string name;
  Var var;
  bool trainable = true;
};
using ParameterList = std::vector<NamedVar>;

std::int64_t count_trainable(const ParameterList& params);
void zero_grad(const ParameterList& params);
void set_trainable(const ParameterList& params, bool on);

class Conv2d {
 public:
  Conv2d() = default;
  // Weights use fan-in scaled normal init: std = gain / sqrt(in * k * k).
  Conv2d(int in_c, int out_c, int kernel, int stride, int pad, bool bias,
         std::uint64_t seed, real gain);

  Var forward(const Var& x) const;
  void collect(ParameterList& out, const std::string& prefix) const;
  int in_channels() const { return in_c_; }
  int out_channels() const { return out_c_; }
  Var& weight() { return weight_; }
  Var& bias() { return bias_; }

 private:
  int in_c_ = 0;
  int out_c_ = 0;
  int stride_ = 1;
  int pad_ = 0;
  Var weight_;
  Var bias_;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels);

  Var forward(const Var& x, Mode mode) const;
  void collect(ParameterList& out, const std::string& prefix) const;

 private:
  Var gamma_;
  Var beta_;
  Var running_mean_;
  Var running_var_;
};

class PReLU {
 public:
  PReLU() = default;
  explicit PReLU(int channels, real init = 0.25);

  Var forward(const Var& x) const;
  void collect(ParameterList& out, const std::string& prefix) const;

 private:
  Var slope_;
};

// Conv -> BatchNorm -> PReLU, optionally preceded by nearest x2 upsampling.
// The convolution carries no bias (batch norm removes it).
class ConvBnAct {
 public:
  enum class Resample { none, down, up };

  ConvBnAct() = default;
  ConvBnAct(int in_c, int out_c, Resample resample, std::uint64_t seed);

  Var forward(const Var& x, Mode mode) const;
  void collect(ParameterList& out, const std::string& prefix) const;

 private:
  Resample resample_ = Resample::none;
  Conv2d conv_;
  BatchNorm2d bn_;
  PReLU act_;
};

// PReLU-aware He gain, sqrt(2 / (1 + 0.25^2)).
real prelu_gain();

}  // namespace sparnet::nn
