#include "sparnet/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include <cblas.h>

#include "sparnet/error.hpp"

namespace sparnet::kernels {
namespace {

void check_conv(const ConvGeometry& g) {
  SPARNET_REQUIRE(g.batch >= 1 && g.in_c >= 1 && g.out_c >= 1 && g.kernel >= 1 &&
                      g.stride >= 1 && g.pad >= 0,
                  "invalid convolution geometry");
  SPARNET_REQUIRE(g.out_h() >= 1 && g.out_w() >= 1,
                  "convolution input smaller than kernel");
}

// Per-thread im2col workspace, grown on demand and never zero-filled (every
// entry is written before it is read).
real* col_workspace(std::size_t n) {
  thread_local std::unique_ptr<real[]> buf;
  thread_local std::size_t cap = 0;
  if (n > cap) {
    buf.reset(new real[n]);
    cap = n;
  }
  return buf.get();
}

bool is_pointwise(const ConvGeometry& g) {
  return g.kernel == 1 && g.stride == 1 && g.pad == 0;
}

// col[(ic*k + kh)*k + kw][oh*OW + ow] = x[ic][oh*s + kh - p][ow*s + kw - p]
void im2col(const ConvGeometry& g, const real* x, real* col) {
  const int k = g.kernel, OH = g.out_h(), OW = g.out_w();
  const int rows = g.in_c * k * k;
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const int ic = r / (k * k);
    const int kh = (r / k) % k;
    const int kw = r % k;
    const real* plane = x + static_cast<std::size_t>(ic) * g.in_h * g.in_w;
    real* dst = col + static_cast<std::size_t>(r) * OH * OW;
    for (int oh = 0; oh < OH; ++oh) {
      const int iy = oh * g.stride + kh - g.pad;
      real* drow = dst + static_cast<std::size_t>(oh) * OW;
      if (iy < 0 || iy >= g.in_h) {
        std::fill(drow, drow + OW, 0.0);
        continue;
      }
      const real* srow = plane + static_cast<std::size_t>(iy) * g.in_w;
      if (g.stride == 1) {
        const int shift = kw - g.pad;
        const int lo = std::min(OW, std::max(0, -shift));
        const int hi = std::max(lo, std::min(OW, g.in_w - shift));
        std::fill(drow, drow + lo, 0.0);
        for (int ow = lo; ow < hi; ++ow) drow[ow] = srow[ow + shift];
        std::fill(drow + hi, drow + OW, 0.0);
      } else {
        for (int ow = 0; ow < OW; ++ow) {
          const int ix = ow * g.stride + kw - g.pad;
          drow[ow] = (ix >= 0 && ix < g.in_w) ? srow[ix] : 0.0;
        }
      }
    }
  }
}

// Scatter-add of col back into x (adjoint of im2col).
void col2im_add(const ConvGeometry& g, const real* col, real* x) {
  const int k = g.kernel, OH = g.out_h(), OW = g.out_w();
#pragma omp parallel for schedule(static)
  for (int ic = 0; ic < g.in_c; ++ic) {
    real* plane = x + static_cast<std::size_t>(ic) * g.in_h * g.in_w;
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        const int r = (ic * k + kh) * k + kw;
        const real* src = col + static_cast<std::size_t>(r) * OH * OW;
        for (int oh = 0; oh < OH; ++oh) {
          const int iy = oh * g.stride + kh - g.pad;
          if (iy < 0 || iy >= g.in_h) continue;
          real* xrow = plane + static_cast<std::size_t>(iy) * g.in_w;
          const real* srow = src + static_cast<std::size_t>(oh) * OW;
          if (g.stride == 1) {
            const int shift = kw - g.pad;
            const int lo = std::min(OW, std::max(0, -shift));
            const int hi = std::max(lo, std::min(OW, g.in_w - shift));
            for (int ow = lo; ow < hi; ++ow) xrow[ow + shift] += srow[ow];
          } else {
            for (int ow = 0; ow < OW; ++ow) {
              const int ix = ow * g.stride + kw - g.pad;
              if (ix >= 0 && ix < g.in_w) xrow[ix] += srow[ow];
            }
          }
        }
      }
    }
  }
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const real> input,
                    std::span<const real> weight, std::span<const real> bias,
                    std::span<real> output) {
  check_conv(g);
  SPARNET_REQUIRE(input.size() == g.input_size() && weight.size() == g.weight_size() &&
                      output.size() == g.output_size() &&
                      (bias.empty() || bias.size() == static_cast<std::size_t>(g.out_c)),
                  "conv2d_forward buffer sizes do not match geometry");
  const int K = g.in_c * g.kernel * g.kernel;
  const int P = g.out_h() * g.out_w();
  const std::size_t in_per = static_cast<std::size_t>(g.in_c) * g.in_h * g.in_w;
  const std::size_t out_per = static_cast<std::size_t>(g.out_c) * P;
  real* col = is_pointwise(g) ? nullptr : col_workspace(static_cast<std::size_t>(K) * P);

  for (int n = 0; n < g.batch; ++n) {
    const real* x = input.data() + n * in_per;
    real* y = output.data() + n * out_per;
    const real* b = x;
    if (!is_pointwise(g)) {
      im2col(g, x, col);
      b = col;
    }
    real beta = 0;
    if (!bias.empty()) {
#pragma omp parallel for schedule(static)
      for (int oc = 0; oc < g.out_c; ++oc) std::fill(y + oc * P, y + (oc + 1) * P, bias[oc]);
      beta = 1;
    }
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, g.out_c, P, K, 1.0,
                weight.data(), K, b, P, beta, y, P);
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const real> grad_output,
                           std::span<const real> weight, std::span<real> grad_input) {
  check_conv(g);
  SPARNET_REQUIRE(grad_output.size() == g.output_size() &&
                      weight.size() == g.weight_size() &&
                      grad_input.size() == g.input_size(),
                  "conv2d_backward_input buffer sizes do not match geometry");
  const int K = g.in_c * g.kernel * g.kernel;
  const int P = g.out_h() * g.out_w();
  const std::size_t in_per = static_cast<std::size_t>(g.in_c) * g.in_h * g.in_w;
  const std::size_t out_per = static_cast<std::size_t>(g.out_c) * P;
  real* col = is_pointwise(g) ? nullptr : col_workspace(static_cast<std::size_t>(K) * P);

  for (int n = 0; n < g.batch; ++n) {
    const real* dy = grad_output.data() + n * out_per;
    real* dx = grad_input.data() + n * in_per;
    if (is_pointwise(g)) {
      cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, K, P, g.out_c, 1.0,
                  weight.data(), K, dy, P, 1.0, dx, P);
    } else {
      cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, K, P, g.out_c, 1.0,
                  weight.data(), K, dy, P, 0.0, col, P);
      col2im_add(g, col, dx);
    }
  }
}

void conv2d_backward_params(const ConvGeometry& g, std::span<const real> input,
                            std::span<const real> grad_output,
                            std::span<real> grad_weight, std::span<real> grad_bias) {
  check_conv(g);
  SPARNET_REQUIRE(input.size() == g.input_size() && grad_output.size() == g.output_size() &&
                      grad_weight.size() == g.weight_size() &&
                      (grad_bias.empty() ||
                       grad_bias.size() == static_cast<std::size_t>(g.out_c)),
                  "conv2d_backward_params buffer sizes do not match geometry");
  const int K = g.in_c * g.kernel * g.kernel;
  const int P = g.out_h() * g.out_w();
  const std::size_t in_per = static_cast<std::size_t>(g.in_c) * g.in_h * g.in_w;
  const std::size_t out_per = static_cast<std::size_t>(g.out_c) * P;
  real* col = is_pointwise(g) ? nullptr : col_workspace(static_cast<std::size_t>(K) * P);

  for (int n = 0; n < g.batch; ++n) {
    const real* x = input.data() + n * in_per;
    const real* dy = grad_output.data() + n * out_per;
    const real* b = x;
    if (!is_pointwise(g)) {
      im2col(g, x, col);
      b = col;
    }
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, g.out_c, K, P, 1.0, dy, P, b, P,
                1.0, grad_weight.data(), K);
    if (!grad_bias.empty()) {
#pragma omp parallel for schedule(static)
      for (int oc = 0; oc < g.out_c; ++oc) {
        real acc = 0;
        const real* row = dy + static_cast<std::size_t>(oc) * P;
        for (int p = 0; p < P; ++p) acc += row[p];
        grad_bias[oc] += acc;
      }
    }
  }
}

void batch_norm_stats(const Shape& s, std::span<const real> input, std::span<real> mean,
                      std::span<real> var) {
  const std::size_t hw = s.plane();
  const real count = static_cast<real>(s.n) * hw;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < s.c; ++c) {
    real sum = 0;
    for (int n = 0; n < s.n; ++n) {
      const real* p = input.data() + (static_cast<std::size_t>(n) * s.c + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) sum += p[i];
    }
    const real mu = sum / count;
    real sq = 0;
    for (int n = 0; n < s.n; ++n) {
      const real* p = input.data() + (static_cast<std::size_t>(n) * s.c + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const real d = p[i] - mu;
        sq += d * d;
      }
    }
    mean[c] = mu;
    var[c] = sq / count;
  }
}

void batch_norm_forward(const Shape& s, std::span<const real> input,
                        std::span<const real> mean, std::span<const real> inv_std,
                        std::span<const real> gamma, std::span<const real> beta,
                        std::span<real> output) {
  const std::size_t hw = s.plane();
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * hw;
      const real a = gamma[c] * inv_std[c];
      const real b = beta[c] - a * mean[c];
      for (std::size_t i = 0; i < hw; ++i) output[off + i] = a * input[off + i] + b;
    }
  }
}

void batch_norm_backward(const Shape& s, std::span<const real> input,
                         std::span<const real> grad_output, std::span<const real> mean,
                         std::span<const real> inv_std, std::span<const real> gamma,
                         bool batch_stats, std::span<real> grad_input,
                         std::span<real> grad_gamma, std::span<real> grad_beta) {
  const std::size_t hw = s.plane();
  const real count = static_cast<real>(s.n) * hw;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < s.c; ++c) {
    real sum_dy = 0, sum_dy_xhat = 0;
    for (int n = 0; n < s.n; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const real xhat = (input[off + i] - mean[c]) * inv_std[c];
        sum_dy += grad_output[off + i];
        sum_dy_xhat += grad_output[off + i] * xhat;
      }
    }
    if (!grad_gamma.empty()) grad_gamma[c] += sum_dy_xhat;
    if (!grad_beta.empty()) grad_beta[c] += sum_dy;
    if (grad_input.empty()) continue;
    const real a = gamma[c] * inv_std[c];
    for (int n = 0; n < s.n; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * hw;
      if (batch_stats) {
        const real mdy = sum_dy / count, mdyx = sum_dy_xhat / count;
        for (std::size_t i = 0; i < hw; ++i) {
          const real xhat = (input[off + i] - mean[c]) * inv_std[c];
          grad_input[off + i] += a * (grad_output[off + i] - mdy - xhat * mdyx);
        }
      } else {
        for (std::size_t i = 0; i < hw; ++i) grad_input[off + i] += a * grad_output[off + i];
      }
    }
  }
}

void upsample_nearest2x(const Shape& in, std::span<const real> input,
                        std::span<real> output) {
  const int H = in.h, W = in.w, planes = in.n * in.c;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const real* src = input.data() + static_cast<std::size_t>(p) * H * W;
    real* dst = output.data() + static_cast<std::size_t>(p) * 4 * H * W;
    for (int y = 0; y < 2 * H; ++y) {
      const real* srow = src + static_cast<std::size_t>(y / 2) * W;
      real* drow = dst + static_cast<std::size_t>(y) * 2 * W;
      for (int x = 0; x < 2 * W; ++x) drow[x] = srow[x / 2];
    }
  }
}

void upsample_nearest2x_backward(const Shape& in, std::span<const real> grad_output,
                                 std::span<real> grad_input) {
  const int H = in.h, W = in.w, planes = in.n * in.c;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const real* g = grad_output.data() + static_cast<std::size_t>(p) * 4 * H * W;
    real* d = grad_input.data() + static_cast<std::size_t>(p) * H * W;
    for (int y = 0; y < H; ++y) {
      const real* r0 = g + static_cast<std::size_t>(2 * y) * 2 * W;
      const real* r1 = r0 + 2 * W;
      for (int x = 0; x < W; ++x) {
        d[y * W + x] += r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1];
      }
    }
  }
}

void downsample_half(const Shape& in, std::span<const real> input,
                     std::span<real> output) {
  const int OH = in.h / 2, OW = in.w / 2, planes = in.n * in.c;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const real* src = input.data() + static_cast<std::size_t>(p) * in.h * in.w;
    real* dst = output.data() + static_cast<std::size_t>(p) * OH * OW;
    for (int y = 0; y < OH; ++y) {
      const real* r0 = src + static_cast<std::size_t>(2 * y) * in.w;
      const real* r1 = r0 + in.w;
      for (int x = 0; x < OW; ++x) {
        dst[y * OW + x] = 0.25 * (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]);
      }
    }
  }
}

void downsample_half_backward(const Shape& in, std::span<const real> grad_output,
                              std::span<real> grad_input) {
  const int OH = in.h / 2, OW = in.w / 2, planes = in.n * in.c;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const real* g = grad_output.data() + static_cast<std::size_t>(p) * OH * OW;
    real* d = grad_input.data() + static_cast<std::size_t>(p) * in.h * in.w;
    for (int y = 0; y < OH; ++y) {
      real* r0 = d + static_cast<std::size_t>(2 * y) * in.w;
      real* r1 = r0 + in.w;
      for (int x = 0; x < OW; ++x) {
        const real q = 0.25 * g[y * OW + x];
        r0[2 * x] += q;
        r0[2 * x + 1] += q;
        r1[2 * x] += q;
        r1[2 * x + 1] += q;
      }
    }
  }
}

void max_pool2x2(const Shape& in, std::span<const real> input, std::span<real> output,
                 std::span<std::size_t> argmax) {
  const int OH = in.h / 2, OW = in.w / 2, planes = in.n * in.c;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const std::size_t base = static_cast<std::size_t>(p) * in.h * in.w;
    for (int y = 0; y < OH; ++y) {
      for (int x = 0; x < OW; ++x) {
        std::size_t best = base + static_cast<std::size_t>(2 * y) * in.w + 2 * x;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t idx = base + static_cast<std::size_t>(2 * y + dy) * in.w + 2 * x + dx;
            if (input[idx] > input[best]) best = idx;
          }
        }
        const std::size_t o = static_cast<std::size_t>(p) * OH * OW + y * OW + x;
        output[o] = input[best];
        argmax[o] = best;
      }
    }
  }
}

void filter_separable(std::span<const real> plane, int height, int width,
                      std::span<const real> kernel_y, std::span<const real> kernel_x,
                      Edge edge, std::span<real> output) {
  SPARNET_REQUIRE(kernel_x.size() % 2 == 1 && kernel_y.size() % 2 == 1,
                  "separable kernels must have odd length");
  const int rx = static_cast<int>(kernel_x.size()) / 2;
  const int ry = static_cast<int>(kernel_y.size()) / 2;
  real total_x = 0, total_y = 0;
  for (real v : kernel_x) total_x += v;
  for (real v : kernel_y) total_y += v;
  std::vector<real> tmp(static_cast<std::size_t>(height) * width);

#pragma omp parallel for schedule(static)
  for (int y = 0; y < height; ++y) {
    const real* row = plane.data() + static_cast<std::size_t>(y) * width;
    real* trow = tmp.data() + static_cast<std::size_t>(y) * width;
    for (int x = 0; x < width; ++x) {
      real acc = 0, wsum = 0;
      for (int k = -rx; k <= rx; ++k) {
        int xx = x + k;
        const real w = kernel_x[k + rx];
        if (edge == Edge::replicate) {
          xx = std::clamp(xx, 0, width - 1);
        } else if (xx < 0 || xx >= width) {
          continue;
        }
        acc += w * row[xx];
        wsum += w;
      }
      trow[x] = edge == Edge::renormalize ? acc * (total_x / wsum) : acc;
    }
  }
#pragma omp parallel for schedule(static)
  for (int y = 0; y < height; ++y) {
    real* orow = output.data() + static_cast<std::size_t>(y) * width;
    for (int x = 0; x < width; ++x) {
      real acc = 0, wsum = 0;
      for (int k = -ry; k <= ry; ++k) {
        int yy = y + k;
        const real w = kernel_y[k + ry];
        if (edge == Edge::replicate) {
          yy = std::clamp(yy, 0, height - 1);
        } else if (yy < 0 || yy >= height) {
          continue;
        }
        acc += w * tmp[static_cast<std::size_t>(yy) * width + x];
        wsum += w;
      }
      orow[x] = edge == Edge::renormalize ? acc * (total_y / wsum) : acc;
    }
  }
}

void filter2d_replicate(std::span<const real> plane, int height, int width,
                        std::span<const real> kernel, int ksize, std::span<real> output) {
  SPARNET_REQUIRE(ksize % 2 == 1 && kernel.size() == static_cast<std::size_t>(ksize) * ksize,
                  "filter2d kernel must be odd and square");
  const int r = ksize / 2;
#pragma omp parallel for schedule(static)
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      real acc = 0;
      for (int ky = -r; ky <= r; ++ky) {
        const int yy = std::clamp(y + ky, 0, height - 1);
        const real* row = plane.data() + static_cast<std::size_t>(yy) * width;
        const real* krow = kernel.data() + static_cast<std::size_t>(ky + r) * ksize;
        for (int kx = -r; kx <= r; ++kx) {
          const real w = krow[kx + r];
          if (w != 0) acc += w * row[std::clamp(x + kx, 0, width - 1)];
        }
      }
      output[static_cast<std::size_t>(y) * width + x] = acc;
    }
  }
}

void median_filter(std::span<const real> plane, int height, int width, int ksize,
                   std::span<real> output) {
  SPARNET_REQUIRE(ksize % 2 == 1, "median window must be odd");
  const int r = ksize / 2;
  const std::size_t mid = static_cast<std::size_t>(ksize) * ksize / 2;
#pragma omp parallel
  {
    std::vector<real> window(static_cast<std::size_t>(ksize) * ksize);
#pragma omp for schedule(static)
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        std::size_t i = 0;
        for (int ky = -r; ky <= r; ++ky) {
          const real* row =
              plane.data() + static_cast<std::size_t>(std::clamp(y + ky, 0, height - 1)) * width;
          for (int kx = -r; kx <= r; ++kx) window[i++] = row[std::clamp(x + kx, 0, width - 1)];
        }
        std::nth_element(window.begin(), window.begin() + mid, window.end());
        output[static_cast<std::size_t>(y) * width + x] = window[mid];
      }
    }
  }
}

}  // namespace sparnet::kernels
