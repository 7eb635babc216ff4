#include <doctest.h>

#include <cmath>

#include "sparnet/autograd.hpp"
#include "sparnet/rng.hpp"
#include "support/gradcheck.hpp"

using namespace sparnet;

namespace {

Tensor rand_tensor(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng(seed);
  Tensor t(s);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

nn::NamedVar leaf(const std::string& name, Tensor t) { return {name, Var(std::move(t), true)}; }

// Random linear functional so every output entry gets a distinct weight.
Var probe(const Var& y, std::uint64_t seed) {
  Var w(rand_tensor(y.shape(), seed));
  return ops::mean_sq_diff(y, w);
}

void expect_grads(const std::function<Var()>& f, const nn::ParameterList& vars) {
  const auto rep = testing::grad_check(f, vars);
  INFO(rep.worst);
  CHECK(rep.checked > 0);
  CHECK(rep.max_rel_error < 1e-5);
}

}  // namespace

TEST_CASE("conv2d gradients") {
  auto x = leaf("x", rand_tensor({2, 3, 6, 5}, 1));
  auto w = leaf("w", rand_tensor({4, 3, 3, 3}, 2));
  auto b = leaf("b", rand_tensor({1, 4, 1, 1}, 3));
  for (int stride : {1, 2}) {
    expect_grads([&] { return probe(ops::conv2d(x.var, w.var, b.var, stride, 1), 4); }, {x, w, b});
  }
  // Bias-free and bias-only-trainable paths.
  expect_grads([&] { return probe(ops::conv2d(x.var, w.var, Var(), 1, 1), 5); }, {x, w});
  Var wc(w.var.value());
  expect_grads([&] { return probe(ops::conv2d(x.var.detach(), wc, b.var, 1, 1), 6); }, {b});
}

TEST_CASE("batch norm gradients in both modes") {
  auto x = leaf("x", rand_tensor({3, 2, 4, 4}, 7));
  auto g = leaf("gamma", rand_tensor({1, 2, 1, 1}, 8, 0.5, 1.5));
  auto be = leaf("beta", rand_tensor({1, 2, 1, 1}, 9));
  Tensor rm({1, 2, 1, 1}, 0.1), rv({1, 2, 1, 1}, 2.0);
  ops::BatchNormState st{&rm, &rv};
  for (bool training : {true, false}) {
    expect_grads([&] { return probe(ops::batch_norm(x.var, g.var, be.var, st, training), 10); },
                 {x, g, be});
  }
}

TEST_CASE("batch norm running statistics") {
  Tensor x({2, 1, 1, 2}, std::vector<real>{1, 2, 3, 6});
  Tensor rm({1, 1, 1, 1}, 0.0), rv({1, 1, 1, 1}, 1.0);
  Var g(Tensor({1, 1, 1, 1}, 1.0)), b(Tensor({1, 1, 1, 1}, 0.0));
  ops::batch_norm(Var(x), g, b, {&rm, &rv, 0.1, 1e-5}, true);
  // mean 3, unbiased variance (4 + 1 + 0 + 9) / 3.
  CHECK(rm[0] == doctest::Approx(0.3));
  CHECK(rv[0] == doctest::Approx(0.9 + 0.1 * 14.0 / 3.0));
  Var y = ops::batch_norm(Var(x), g, b, {&rm, &rv, 0.1, 1e-5}, false);
  CHECK(y.value()[0] == doctest::Approx((1 - rm[0]) / std::sqrt(rv[0] + 1e-5)));
}

TEST_CASE("activation gradients") {
  auto x = leaf("x", rand_tensor({2, 3, 3, 3}, 11));
  auto a = leaf("slope", rand_tensor({1, 3, 1, 1}, 12, 0.1, 0.4));
  expect_grads([&] { return probe(ops::prelu(x.var, a.var), 13); }, {x, a});
  expect_grads([&] { return probe(ops::leaky_relu(x.var, 0.2), 14); }, {x});
  expect_grads([&] { return probe(ops::relu(x.var), 15); }, {x});
  expect_grads([&] { return probe(ops::sigmoid(x.var), 16); }, {x});
  expect_grads([&] { return probe(ops::add_scalar(ops::scale(x.var, -1.7), 0.3), 17); }, {x});
}

TEST_CASE("structural op gradients") {
  auto x = leaf("x", rand_tensor({2, 3, 4, 6}, 18));
  auto y = leaf("y", rand_tensor({2, 3, 4, 6}, 19));
  auto m = leaf("m", rand_tensor({2, 1, 4, 6}, 20));
  expect_grads([&] { return probe(ops::add(x.var, y.var), 21); }, {x, y});
  expect_grads([&] { return probe(ops::sub(x.var, y.var), 22); }, {x, y});
  expect_grads([&] { return probe(ops::mul_channel_broadcast(x.var, m.var), 23); }, {x, m});
  expect_grads([&] { return probe(ops::upsample_nearest2x(x.var), 24); }, {x});
  expect_grads([&] { return probe(ops::downsample_half(x.var), 25); }, {x});
  expect_grads([&] { return probe(ops::max_pool2x2(x.var), 26); }, {x});
  expect_grads([&] { return probe(ops::sample_mean(x.var), 27); }, {x});
  expect_grads([&] { return ops::mean_abs_diff(x.var, y.var); }, {x, y});
  expect_grads(
      [&] {
        const Var terms[] = {ops::mean(x.var), ops::mean_sq_diff(x.var, y.var)};
        const real weights[] = {2.5, -0.5};
        return ops::weighted_sum(terms, weights);
      },
      {x, y});
}

TEST_CASE("shared subexpressions accumulate gradients") {
  Var x(Tensor({1, 1, 1, 3}, std::vector<real>{1, 2, 3}), true);
  Var y = ops::add(x, ops::scale(x, 2));  // 3x
  ops::mean(ops::mul_channel_broadcast(y, y)).backward();  // mean 9x^2
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(18.0 * (i + 1) / 3));
}

TEST_CASE("no-grad mode records nothing") {
  Var x(Tensor({1, 1, 2, 2}, 1.0), true);
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_mode_enabled());
    Var y = ops::scale(x, 2);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->parents.empty());
  }
  CHECK(grad_mode_enabled());
  CHECK(ops::scale(x, 2).requires_grad());
}

TEST_CASE("leaf gradients accumulate until cleared") {
  Var x(Tensor({1, 1, 1, 2}, std::vector<real>{1, -1}), true);
  ops::mean(x).backward();
  ops::mean(x).backward();
  CHECK(x.grad()[0] == doctest::Approx(1.0));
  x.zero_grad();
  CHECK_FALSE(x.has_grad());
}
