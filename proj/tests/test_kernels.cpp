#include <doctest.h>

#include <cmath>
#include <vector>

#include "sparnet/kernels.hpp"
#include "sparnet/kernels_reference.hpp"
#include "sparnet/rng.hpp"

using namespace sparnet;
using namespace sparnet::kernels;

namespace {

std::vector<real> randv(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<real> v(n);
  for (real& x : v) x = rng.uniform(-1, 1);
  return v;
}

double max_abs_diff(const std::vector<real>& a, const std::vector<real>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("conv kernels agree with the direct reference") {
  const std::vector<ConvGeometry> cases = {
      {2, 3, 9, 7, 5, 3, 1, 1}, {1, 4, 8, 8, 6, 3, 2, 1}, {3, 2, 6, 5, 4, 1, 1, 0},
      {2, 3, 16, 16, 4, 4, 2, 1}, {1, 1, 5, 5, 1, 3, 1, 1}, {2, 5, 7, 9, 3, 1, 2, 0}};
  std::uint64_t seed = 10;
  for (const auto& g : cases) {
    CAPTURE(g.in_c);
    CAPTURE(g.kernel);
    CAPTURE(g.stride);
    const auto in = randv(g.input_size(), ++seed), w = randv(g.weight_size(), ++seed),
               b = randv(g.out_c, ++seed), go = randv(g.output_size(), ++seed);

    std::vector<real> out(g.output_size()), out_ref(g.output_size());
    conv2d_forward(g, in, w, b, out);
    reference::conv2d_forward(g, in, w, b, out_ref);
    CHECK(max_abs_diff(out, out_ref) < 1e-12);

    std::vector<real> nobias(g.output_size()), nobias_ref(g.output_size());
    conv2d_forward(g, in, w, {}, nobias);
    reference::conv2d_forward(g, in, w, {}, nobias_ref);
    CHECK(max_abs_diff(nobias, nobias_ref) < 1e-12);

    // Backward kernels accumulate, so start from a nonzero buffer.
    std::vector<real> gi(g.input_size(), 0.5), gi_ref(g.input_size(), 0.5);
    conv2d_backward_input(g, go, w, gi);
    reference::conv2d_backward_input(g, go, w, gi_ref);
    CHECK(max_abs_diff(gi, gi_ref) < 1e-12);

    std::vector<real> gw(g.weight_size(), 0.25), gw_ref(g.weight_size(), 0.25);
    std::vector<real> gb(g.out_c, -1.0), gb_ref(g.out_c, -1.0);
    conv2d_backward_params(g, in, go, gw, gb);
    reference::conv2d_backward_params(g, in, go, gw_ref, gb_ref);
    CHECK(max_abs_diff(gw, gw_ref) < 1e-11);
    CHECK(max_abs_diff(gb, gb_ref) < 1e-11);
  }
}

TEST_CASE("batch norm forward agrees with the reference") {
  const Shape s{3, 4, 5, 6};
  const auto x = randv(s.numel(), 1), gamma = randv(4, 2), beta = randv(4, 3);
  std::vector<real> mean(4), var(4), inv(4), out(s.numel()), out_ref(s.numel());
  batch_norm_stats(s, x, mean, var);
  for (int c = 0; c < 4; ++c) inv[c] = 1 / std::sqrt(var[c] + 1e-5);
  batch_norm_forward(s, x, mean, inv, gamma, beta, out);
  reference::batch_norm_train_forward(s, x, gamma, beta, 1e-5, out_ref);
  CHECK(max_abs_diff(out, out_ref) < 1e-12);
}

TEST_CASE("separable filter and median agree with the reference") {
  const int H = 13, W = 17;
  const auto plane = randv(H * W, 4);
  for (int k : {1, 3, 5, 11}) {
    const auto ky = randv(k, 5 + k), kx = randv(k, 6 + k);
    for (Edge e : {Edge::replicate, Edge::renormalize}) {
      std::vector<real> out(H * W), out_ref(H * W);
      filter_separable(plane, H, W, ky, kx, e, out);
      reference::filter_separable(plane, H, W, ky, kx, e, out_ref);
      CHECK(max_abs_diff(out, out_ref) < 1e-12);
    }
  }
  for (int k : {3, 5, 7}) {
    std::vector<real> out(H * W), out_ref(H * W);
    median_filter(plane, H, W, k, out);
    reference::median_filter(plane, H, W, k, out_ref);
    CHECK(out == out_ref);
  }
}

TEST_CASE("dense replicate filter matches the separable one on an outer product") {
  const int H = 9, W = 8, k = 5;
  const auto plane = randv(H * W, 7);
  const auto ky = randv(k, 8), kx = randv(k, 9);
  std::vector<real> dense(k * k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) dense[i * k + j] = ky[i] * kx[j];
  std::vector<real> a(H * W), b(H * W);
  filter2d_replicate(plane, H, W, dense, k, a);
  filter_separable(plane, H, W, ky, kx, Edge::replicate, b);
  CHECK(max_abs_diff(a, b) < 1e-12);
}

TEST_CASE("resampling kernels") {
  const Shape s{2, 3, 4, 6};
  const auto x = randv(s.numel(), 11);
  std::vector<real> up(s.numel() * 4);
  upsample_nearest2x(s, x, up);
  std::vector<real> down(s.numel());
  downsample_half(Shape{2, 3, 8, 12}, up, down);
  // 2x2 means of replicated pixels give the pixels back.
  CHECK(max_abs_diff(down, x) < 1e-15);

  std::vector<real> pooled(s.numel());
  std::vector<std::size_t> arg(s.numel());
  max_pool2x2(Shape{2, 3, 8, 12}, up, pooled, arg);
  CHECK(max_abs_diff(pooled, x) == 0);

  // Adjoint identities: <up(x), y> == <x, up^T(y)>.
  const auto y = randv(up.size(), 12);
  std::vector<real> ut(s.numel(), 0.0);
  upsample_nearest2x_backward(s, y, ut);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < up.size(); ++i) lhs += up[i] * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * ut[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));

  const auto z = randv(s.numel(), 13);
  std::vector<real> dt(up.size(), 0.0);
  downsample_half_backward(Shape{2, 3, 8, 12}, z, dt);
  lhs = rhs = 0;
  for (std::size_t i = 0; i < z.size(); ++i) lhs += down[i] * z[i];
  for (std::size_t i = 0; i < up.size(); ++i) rhs += up[i] * dt[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}
