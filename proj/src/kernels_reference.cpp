#include "sparnet/kernels_reference.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace sparnet::kernels::reference {
namespace {

std::size_t in_index(const ConvGeometry& g, int n, int c, int y, int x) {
  return ((static_cast<std::size_t>(n) * g.in_c + c) * g.in_h + y) * g.in_w + x;
}
std::size_t out_index(const ConvGeometry& g, int n, int c, int y, int x) {
  return ((static_cast<std::size_t>(n) * g.out_c + c) * g.out_h() + y) * g.out_w() + x;
}
std::size_t w_index(const ConvGeometry& g, int oc, int ic, int ky, int kx) {
  return ((static_cast<std::size_t>(oc) * g.in_c + ic) * g.kernel + ky) * g.kernel + kx;
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const real> input,
                    std::span<const real> weight, std::span<const real> bias,
                    std::span<real> output) {
  for (int n = 0; n < g.batch; ++n)
    for (int oc = 0; oc < g.out_c; ++oc)
      for (int oy = 0; oy < g.out_h(); ++oy)
        for (int ox = 0; ox < g.out_w(); ++ox) {
          real acc = bias.empty() ? 0 : bias[oc];
          for (int ic = 0; ic < g.in_c; ++ic)
            for (int ky = 0; ky < g.kernel; ++ky)
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int iy = oy * g.stride + ky - g.pad;
                const int ix = ox * g.stride + kx - g.pad;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                acc += weight[w_index(g, oc, ic, ky, kx)] * input[in_index(g, n, ic, iy, ix)];
              }
          output[out_index(g, n, oc, oy, ox)] = acc;
        }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const real> grad_output,
                           std::span<const real> weight, std::span<real> grad_input) {
  for (int n = 0; n < g.batch; ++n)
    for (int oc = 0; oc < g.out_c; ++oc)
      for (int oy = 0; oy < g.out_h(); ++oy)
        for (int ox = 0; ox < g.out_w(); ++ox) {
          const real dy = grad_output[out_index(g, n, oc, oy, ox)];
          for (int ic = 0; ic < g.in_c; ++ic)
            for (int ky = 0; ky < g.kernel; ++ky)
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int iy = oy * g.stride + ky - g.pad;
                const int ix = ox * g.stride + kx - g.pad;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                grad_input[in_index(g, n, ic, iy, ix)] += weight[w_index(g, oc, ic, ky, kx)] * dy;
              }
        }
}

void conv2d_backward_params(const ConvGeometry& g, std::span<const real> input,
                            std::span<const real> grad_output,
                            std::span<real> grad_weight, std::span<real> grad_bias) {
  for (int n = 0; n < g.batch; ++n)
    for (int oc = 0; oc < g.out_c; ++oc)
      for (int oy = 0; oy < g.out_h(); ++oy)
        for (int ox = 0; ox < g.out_w(); ++ox) {
          const real dy = grad_output[out_index(g, n, oc, oy, ox)];
          if (!grad_bias.empty()) grad_bias[oc] += dy;
          for (int ic = 0; ic < g.in_c; ++ic)
            for (int ky = 0; ky < g.kernel; ++ky)
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int iy = oy * g.stride + ky - g.pad;
                const int ix = ox * g.stride + kx - g.pad;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                grad_weight[w_index(g, oc, ic, ky, kx)] += input[in_index(g, n, ic, iy, ix)] * dy;
              }
        }
}

void batch_norm_train_forward(const Shape& s, std::span<const real> input,
                              std::span<const real> gamma, std::span<const real> beta,
                              real eps, std::span<real> output) {
  const std::size_t hw = s.plane();
  for (int c = 0; c < s.c; ++c) {
    real sum = 0;
    for (int n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < hw; ++i) sum += input[(n * s.c + c) * hw + i];
    const real mu = sum / (s.n * hw);
    real sq = 0;
    for (int n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < hw; ++i) {
        const real d = input[(n * s.c + c) * hw + i] - mu;
        sq += d * d;
      }
    const real var = sq / (s.n * hw);
    for (int n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < hw; ++i) {
        const std::size_t k = (n * s.c + c) * hw + i;
        output[k] = gamma[c] * (input[k] - mu) / std::sqrt(var + eps) + beta[c];
      }
  }
}

void filter_separable(std::span<const real> plane, int height, int width,
                      std::span<const real> kernel_y, std::span<const real> kernel_x,
                      Edge edge, std::span<real> output) {
  // Direct 2-D evaluation of the outer-product kernel.
  const int rx = static_cast<int>(kernel_x.size()) / 2;
  const int ry = static_cast<int>(kernel_y.size()) / 2;
  real total = 0;
  for (real a : kernel_y)
    for (real b : kernel_x) total += a * b;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      real acc = 0, wsum = 0;
      for (int ky = -ry; ky <= ry; ++ky)
        for (int kx = -rx; kx <= rx; ++kx) {
          int yy = y + ky, xx = x + kx;
          if (edge == Edge::replicate) {
            yy = std::clamp(yy, 0, height - 1);
            xx = std::clamp(xx, 0, width - 1);
          } else if (yy < 0 || yy >= height || xx < 0 || xx >= width) {
            continue;
          }
          const real w = kernel_y[ky + ry] * kernel_x[kx + rx];
          acc += w * plane[static_cast<std::size_t>(yy) * width + xx];
          wsum += w;
        }
      output[static_cast<std::size_t>(y) * width + x] =
          edge == Edge::renormalize ? acc * total / wsum : acc;
    }
}

void median_filter(std::span<const real> plane, int height, int width, int ksize,
                   std::span<real> output) {
  const int r = ksize / 2;
  std::vector<real> window;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      window.clear();
      for (int ky = -r; ky <= r; ++ky)
        for (int kx = -r; kx <= r; ++kx) {
          const int yy = std::clamp(y + ky, 0, height - 1);
          const int xx = std::clamp(x + kx, 0, width - 1);
          window.push_back(plane[static_cast<std::size_t>(yy) * width + xx]);
        }
      std::sort(window.begin(), window.end());
      output[static_cast<std::size_t>(y) * width + x] = window[window.size() / 2];
    }
}

}  // namespace sparnet::kernels::reference
