#include "sparnet/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "sparnet/error.hpp"
#include "sparnet/kernels.hpp"

namespace sparnet {
namespace {

thread_local bool g_grad_enabled = true;

constexpr std::size_t kParallelThreshold = 1 << 15;

void check_same_shape(const Var& a, const Var& b, const char* op) {
  SPARNET_REQUIRE(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                              a.shape().str() + " vs " + b.shape().str());
}

}  // namespace

Tensor& detail::Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape(), 0);
  return grad;
}

bool grad_mode_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var Var::make(Tensor value, const std::vector<Var>& parents,
              std::function<void(const detail::Node&)> backward) {
  Var out(std::move(value), false);
  if (!g_grad_enabled) return out;
  for (const Var& p : parents) {
    if (p.defined() && p.requires_grad()) out.node_->parents.push_back(p.node_);
  }
  if (out.node_->parents.empty()) return out;
  out.node_->requires_grad = true;
  out.node_->backward = std::move(backward);
  return out;
}

real Var::item() const {
  SPARNET_REQUIRE(node_->value.numel() == 1, "item() needs a single-element tensor");
  return node_->value[0];
}

void Var::backward() const {
  SPARNET_REQUIRE(node_->value.numel() == 1, "backward() without seed needs a scalar");
  backward(Tensor(node_->value.shape(), 1.0));
}

void Var::backward(const Tensor& seed) const {
  SPARNET_REQUIRE(node_->requires_grad, "backward() on a value that does not require grad");
  SPARNET_REQUIRE(seed.shape() == node_->value.shape(), "backward seed shape mismatch");

  // Post-order DFS gives parents before children; walk it in reverse.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  Tensor& g = node_->grad_buffer();
  for (std::size_t i = 0; i < g.numel(); ++i) g[i] += seed[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->backward || n->grad.empty()) continue;
    n->backward(*n);
    // Interior gradients are not needed once propagated.
    n->grad = Tensor();
  }
}

namespace ops {

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  SPARNET_REQUIRE(ws.h == ws.w, "conv2d: square kernels only");
  SPARNET_REQUIRE(xs.c == ws.c, "conv2d: input has " + std::to_string(xs.c) +
                                    " channels, weight expects " + std::to_string(ws.c));
  kernels::ConvGeometry g{xs.n, xs.c, xs.h, xs.w, ws.n, ws.h, stride, pad};
  Tensor out(Shape{xs.n, ws.n, g.out_h(), g.out_w()});
  std::span<const real> b;
  if (bias.defined()) b = bias.value().span();
  kernels::conv2d_forward(g, x.value().span(), weight.value().span(), b, out.span());

  return Var::make(std::move(out), {x, weight, bias}, [x, weight, bias, g](const detail::Node& self) {
    if (x.requires_grad()) {
      kernels::conv2d_backward_input(g, self.grad.span(), weight.value().span(),
                                     x.node()->grad_buffer().span());
    }
    const bool wb = weight.requires_grad();
    const bool bb = bias.defined() && bias.requires_grad();
    if (wb || bb) {
      Tensor scratch;
      std::span<real> gw;
      if (wb) {
        gw = weight.node()->grad_buffer().span();
      } else {
        scratch = Tensor(weight.shape());
        gw = scratch.span();
      }
      std::span<real> gb;
      if (bb) gb = bias.node()->grad_buffer().span();
      kernels::conv2d_backward_params(g, x.value().span(), self.grad.span(), gw, gb);
    }
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState state,
               bool training) {
  const Shape s = x.shape();
  SPARNET_REQUIRE(gamma.value().numel() == static_cast<std::size_t>(s.c),
                  "batch_norm: channel count mismatch");
  auto mean = std::make_shared<std::vector<real>>(s.c);
  auto inv_std = std::make_shared<std::vector<real>>(s.c);
  if (training) {
    std::vector<real> var(s.c);
    kernels::batch_norm_stats(s, x.value().span(), *mean, var);
    const real count = static_cast<real>(s.n) * s.plane();
    const real unbias = count > 1 ? count / (count - 1) : 1;
    for (int c = 0; c < s.c; ++c) {
      (*inv_std)[c] = 1.0 / std::sqrt(var[c] + state.eps);
      (*state.running_mean)[c] =
          (1 - state.momentum) * (*state.running_mean)[c] + state.momentum * (*mean)[c];
      (*state.running_var)[c] =
          (1 - state.momentum) * (*state.running_var)[c] + state.momentum * var[c] * unbias;
    }
  } else {
    for (int c = 0; c < s.c; ++c) {
      (*mean)[c] = (*state.running_mean)[c];
      (*inv_std)[c] = 1.0 / std::sqrt((*state.running_var)[c] + state.eps);
    }
  }
  Tensor out(s);
  kernels::batch_norm_forward(s, x.value().span(), *mean, *inv_std, gamma.value().span(),
                              beta.value().span(), out.span());
  return Var::make(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, mean, inv_std, training, s](const detail::Node& self) {
                     std::span<real> gx, gg, gb;
                     if (x.requires_grad()) gx = x.node()->grad_buffer().span();
                     if (gamma.requires_grad()) gg = gamma.node()->grad_buffer().span();
                     if (beta.requires_grad()) gb = beta.node()->grad_buffer().span();
                     kernels::batch_norm_backward(s, x.value().span(), self.grad.span(), *mean,
                                                  *inv_std, gamma.value().span(), training, gx,
                                                  gg, gb);
                   });
}

Var prelu(const Var& x, const Var& slope) {
  const Shape s = x.shape();
  SPARNET_REQUIRE(slope.value().numel() == static_cast<std::size_t>(s.c),
                  "prelu: slope count must equal channels");
  const std::size_t hw = s.plane();
  Tensor out(s);
  const real* in = x.value().data();
  const real* a = slope.value().data();
  real* o = out.data();
#pragma omp parallel for collapse(2) schedule(static) if (s.numel() > kParallelThreshold)
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const real v = in[off + i];
        o[off + i] = v > 0 ? v : a[c] * v;
      }
    }
  return Var::make(std::move(out), {x, slope}, [x, slope, s, hw](const detail::Node& self) {
    const real* in = x.value().data();
    const real* a = slope.value().data();
    const real* dy = self.grad.data();
    if (x.requires_grad()) {
      real* dx = x.node()->grad_buffer().data();
#pragma omp parallel for collapse(2) schedule(static) if (s.numel() > kParallelThreshold)
      for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
          const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * hw;
          for (std::size_t i = 0; i < hw; ++i)
            dx[off + i] += in[off + i] > 0 ? dy[off + i] : a[c] * dy[off + i];
        }
    }
    if (slope.requires_grad()) {
      real* da = slope.node()->grad_buffer().data();
      for (int c = 0; c < s.c; ++c) {
        real acc = 0;
        for (int n = 0; n < s.n; ++n) {
          const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * hw;
          for (std::size_t i = 0; i < hw; ++i)
            if (in[off + i] <= 0) acc += in[off + i] * dy[off + i];
        }
        da[c] += acc;
      }
    }
  });
}

namespace {

// Elementwise unary op with derivative expressed through (x, y).
template <typename F, typename D>
Var unary(const Var& x, F f, D dfdx) {
  Tensor out(x.shape());
  const std::size_t n = out.numel();
  const real* in = x.value().data();
  real* o = out.data();
#pragma omp parallel for schedule(static) if (n > kParallelThreshold)
  for (std::size_t i = 0; i < n; ++i) o[i] = f(in[i]);
  return Var::make(std::move(out), {x}, [x, dfdx](const detail::Node& self) {
    const std::size_t n = self.value.numel();
    const real* in = x.value().data();
    const real* y = self.value.data();
    const real* dy = self.grad.data();
    real* dx = x.node()->grad_buffer().data();
#pragma omp parallel for schedule(static) if (n > kParallelThreshold)
    for (std::size_t i = 0; i < n; ++i) dx[i] += dy[i] * dfdx(in[i], y[i]);
  });
}

}  // namespace

Var leaky_relu(const Var& x, real slope) {
  return unary(
      x, [slope](real v) { return v > 0 ? v : slope * v; },
      [slope](real v, real) { return v > 0 ? 1.0 : slope; });
}

Var relu(const Var& x) {
  return unary(
      x, [](real v) { return v > 0 ? v : 0.0; }, [](real v, real) { return v > 0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& x) {
  return unary(
      x, [](real v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](real, real y) { return y * (1.0 - y); });
}

Var scale(const Var& x, real s) {
  return unary(x, [s](real v) { return s * v; }, [s](real, real) { return s; });
}

Var add_scalar(const Var& x, real s) {
  return unary(x, [s](real v) { return v + s; }, [](real, real) { return 1.0; });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out(a.shape());
  const std::size_t n = out.numel();
  const real* pa = a.value().data();
  const real* pb = b.value().data();
  real* o = out.data();
#pragma omp parallel for schedule(static) if (n > kParallelThreshold)
  for (std::size_t i = 0; i < n; ++i) o[i] = pa[i] + pb[i];
  return Var::make(std::move(out), {a, b}, [a, b](const detail::Node& self) {
    const std::size_t n = self.grad.numel();
    for (const Var* v : {&a, &b}) {
      if (!v->requires_grad()) continue;
      real* d = v->node()->grad_buffer().data();
      const real* dy = self.grad.data();
#pragma omp parallel for schedule(static) if (n > kParallelThreshold)
      for (std::size_t i = 0; i < n; ++i) d[i] += dy[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i] - b.value()[i];
  return Var::make(std::move(out), {a, b}, [a, b](const detail::Node& self) {
    const std::size_t n = self.grad.numel();
    if (a.requires_grad()) {
      real* d = a.node()->grad_buffer().data();
      for (std::size_t i = 0; i < n; ++i) d[i] += self.grad[i];
    }
    if (b.requires_grad()) {
      real* d = b.node()->grad_buffer().data();
      for (std::size_t i = 0; i < n; ++i) d[i] -= self.grad[i];
    }
  });
}

Var mul_channel_broadcast(const Var& f, const Var& alpha) {
  const Shape s = f.shape();
  const Shape as = alpha.shape();
  SPARNET_REQUIRE(as.n == s.n && as.c == 1 && as.h == s.h && as.w == s.w,
                  "attention map " + as.str() + " does not match features " + s.str());
  const std::size_t hw = s.plane();
  Tensor out(s);
  const real* pf = f.value().data();
  const real* pa = alpha.value().data();
  real* o = out.data();
#pragma omp parallel for collapse(2) schedule(static) if (s.numel() > kParallelThreshold)
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * hw;
      const real* an = pa + static_cast<std::size_t>(n) * hw;
      for (std::size_t i = 0; i < hw; ++i) o[off + i] = pf[off + i] * an[i];
    }
  return Var::make(std::move(out), {f, alpha}, [f, alpha, s, hw](const detail::Node& self) {
    const real* dy = self.grad.data();
    const real* pf = f.value().data();
    const real* pa = alpha.value().data();
    if (f.requires_grad()) {
      real* df = f.node()->grad_buffer().data();
#pragma omp parallel for collapse(2) schedule(static) if (s.numel() > kParallelThreshold)
      for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
          const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * hw;
          const real* an = pa + static_cast<std::size_t>(n) * hw;
          for (std::size_t i = 0; i < hw; ++i) df[off + i] += dy[off + i] * an[i];
        }
    }
    if (alpha.requires_grad()) {
      real* da = alpha.node()->grad_buffer().data();
#pragma omp parallel for schedule(static) if (s.numel() > kParallelThreshold)
      for (int n = 0; n < s.n; ++n) {
        real* dn = da + static_cast<std::size_t>(n) * hw;
        for (int c = 0; c < s.c; ++c) {
          const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * hw;
          for (std::size_t i = 0; i < hw; ++i) dn[i] += dy[off + i] * pf[off + i];
        }
      }
    }
  });
}

Var upsample_nearest2x(const Var& x) {
  const Shape s = x.shape();
  Tensor out(Shape{s.n, s.c, 2 * s.h, 2 * s.w});
  kernels::upsample_nearest2x(s, x.value().span(), out.span());
  return Var::make(std::move(out), {x}, [x, s](const detail::Node& self) {
    kernels::upsample_nearest2x_backward(s, self.grad.span(), x.node()->grad_buffer().span());
  });
}

Var downsample_half(const Var& x) {
  const Shape s = x.shape();
  SPARNET_REQUIRE(s.h % 2 == 0 && s.w % 2 == 0, "downsample_half needs even extents");
  Tensor out(Shape{s.n, s.c, s.h / 2, s.w / 2});
  kernels::downsample_half(s, x.value().span(), out.span());
  return Var::make(std::move(out), {x}, [x, s](const detail::Node& self) {
    kernels::downsample_half_backward(s, self.grad.span(), x.node()->grad_buffer().span());
  });
}

Var max_pool2x2(const Var& x) {
  const Shape s = x.shape();
  SPARNET_REQUIRE(s.h % 2 == 0 && s.w % 2 == 0, "max_pool2x2 needs even extents");
  Tensor out(Shape{s.n, s.c, s.h / 2, s.w / 2});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  kernels::max_pool2x2(s, x.value().span(), out.span(), *argmax);
  return Var::make(std::move(out), {x}, [x, argmax](const detail::Node& self) {
    real* dx = x.node()->grad_buffer().data();
    for (std::size_t i = 0; i < argmax->size(); ++i) dx[(*argmax)[i]] += self.grad[i];
  });
}

Var mean(const Var& x) {
  const std::size_t n = x.value().numel();
  real acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x.value()[i];
  Tensor out(Shape{1, 1, 1, 1}, acc / n);
  return Var::make(std::move(out), {x}, [x, n](const detail::Node& self) {
    const real g = self.grad[0] / n;
    real* dx = x.node()->grad_buffer().data();
    for (std::size_t i = 0; i < n; ++i) dx[i] += g;
  });
}

Var sample_mean(const Var& x) {
  const Shape s = x.shape();
  const std::size_t per = s.sample();
  Tensor out(Shape{s.n, 1, 1, 1});
  for (int n = 0; n < s.n; ++n) {
    real acc = 0;
    for (std::size_t i = 0; i < per; ++i) acc += x.value()[n * per + i];
    out[n] = acc / per;
  }
  return Var::make(std::move(out), {x}, [x, s, per](const detail::Node& self) {
    real* dx = x.node()->grad_buffer().data();
    for (int n = 0; n < s.n; ++n) {
      const real g = self.grad[n] / per;
      for (std::size_t i = 0; i < per; ++i) dx[n * per + i] += g;
    }
  });
}

Var mean_abs_diff(const Var& a, const Var& b) {
  check_same_shape(a, b, "mean_abs_diff");
  const std::size_t n = a.value().numel();
  real acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(a.value()[i] - b.value()[i]);
  Tensor out(Shape{1, 1, 1, 1}, acc / n);
  return Var::make(std::move(out), {a, b}, [a, b, n](const detail::Node& self) {
    const real g = self.grad[0] / n;
    auto sign = [](real d) { return d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0); };
    if (a.requires_grad()) {
      real* d = a.node()->grad_buffer().data();
      for (std::size_t i = 0; i < n; ++i) d[i] += g * sign(a.value()[i] - b.value()[i]);
    }
    if (b.requires_grad()) {
      real* d = b.node()->grad_buffer().data();
      for (std::size_t i = 0; i < n; ++i) d[i] -= g * sign(a.value()[i] - b.value()[i]);
    }
  });
}

Var mean_sq_diff(const Var& a, const Var& b) {
  check_same_shape(a, b, "mean_sq_diff");
  const std::size_t n = a.value().numel();
  real acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const real d = a.value()[i] - b.value()[i];
    acc += d * d;
  }
  Tensor out(Shape{1, 1, 1, 1}, acc / n);
  return Var::make(std::move(out), {a, b}, [a, b, n](const detail::Node& self) {
    const real g = 2.0 * self.grad[0] / n;
    if (a.requires_grad()) {
      real* d = a.node()->grad_buffer().data();
      for (std::size_t i = 0; i < n; ++i) d[i] += g * (a.value()[i] - b.value()[i]);
    }
    if (b.requires_grad()) {
      real* d = b.node()->grad_buffer().data();
      for (std::size_t i = 0; i < n; ++i) d[i] -= g * (a.value()[i] - b.value()[i]);
    }
  });
}

Var weighted_sum(std::span<const Var> terms, std::span<const real> weights) {
  SPARNET_REQUIRE(terms.size() == weights.size(), "weighted_sum: size mismatch");
  real acc = 0;
  std::vector<Var> parents(terms.begin(), terms.end());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    SPARNET_REQUIRE(terms[i].value().numel() == 1, "weighted_sum: terms must be scalars");
    acc += weights[i] * terms[i].value()[0];
  }
  std::vector<real> w(weights.begin(), weights.end());
  return Var::make(Tensor(Shape{1, 1, 1, 1}, acc), parents,
                   [parents, w](const detail::Node& self) {
                     for (std::size_t i = 0; i < parents.size(); ++i) {
                       if (parents[i].requires_grad())
                         parents[i].node()->grad_buffer()[0] += w[i] * self.grad[0];
                     }
                   });
}

}  // namespace ops
}  // namespace sparnet
