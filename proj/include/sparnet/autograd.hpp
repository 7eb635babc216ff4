#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "sparnet/tensor.hpp"

namespace sparnet {

class Var;

namespace detail {
struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Receives the node itself (value and accumulated grad) and pushes
  // gradients into the parents it captured.
  std::function<void(const Node& self)> backward;

  Tensor& grad_buffer();
};
}  // namespace detail

// Reference-counted handle to a value in a dynamically recorded graph.
// Copies share the node. Leaves created with requires_grad accumulate
// gradients across backward() calls until zero_grad().
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  const Tensor& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor(); }

  // Scalar (single element) result only; seeds d(self)/d(self) = 1.
  void backward() const;
  // Seeds with an explicit upstream gradient of the same shape.
  void backward(const Tensor& seed) const;

  Var detach() const { return Var(node_->value, false); }
  real item() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  // Builds a result node. `parents` are recorded only when grad mode is on
  // and at least one of them requires a gradient.
  static Var make(Tensor value, const std::vector<Var>& parents,
                  std::function<void(const detail::Node&)> backward);

 private:
  std::shared_ptr<detail::Node> node_;
};

// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

namespace ops {

// Zero-padded 2-D convolution. `bias` may be an undefined Var.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);

struct BatchNormState {
  Tensor* running_mean;
  Tensor* running_var;
  real momentum = 0.1;
  real eps = 1e-5;
};
// Training mode normalizes with batch statistics and updates the running
// averages (unbiased variance, as in the common frameworks); eval mode uses
// the running averages.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState state,
               bool training);

// Per-channel slope, shape (1, C, 1, 1).
Var prelu(const Var& x, const Var& slope);
Var leaky_relu(const Var& x, real slope);
Var relu(const Var& x);
Var sigmoid(const Var& x);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& x, real s);
Var add_scalar(const Var& x, real s);
// f (N,C,H,W) times a single-channel map (N,1,H,W), broadcast over C.
Var mul_channel_broadcast(const Var& f, const Var& alpha);

Var upsample_nearest2x(const Var& x);
Var downsample_half(const Var& x);
Var max_pool2x2(const Var& x);

// Mean over all elements -> (1,1,1,1).
Var mean(const Var& x);
// Mean over (C,H,W) for each sample -> (N,1,1,1).
Var sample_mean(const Var& x);
Var mean_abs_diff(const Var& a, const Var& b);
Var mean_sq_diff(const Var& a, const Var& b);
// Sum of (1,1,1,1) scalars with weights.
Var weighted_sum(std::span<const Var> terms, std::span<const real> weights);

}  // namespace ops
}  // namespace sparnet
