#pragma once

#include <span>

#include "sparnet/tensor.hpp"

// Data-parallel compute kernels (OpenMP). Each kernel here has a serial
// counterpart in kernels_reference.hpp that the tests hold it to.
namespace sparnet::kernels {

struct ConvGeometry {
  int batch = 1;
  int in_c = 1;
  int in_h = 1;
  int in_w = 1;
  int out_c = 1;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  std::size_t input_size() const {
    return static_cast<std::size_t>(batch) * in_c * in_h * in_w;
  }
  std::size_t output_size() const {
    return static_cast<std::size_t>(batch) * out_c * out_h() * out_w();
  }
  std::size_t weight_size() const {
    return static_cast<std::size_t>(out_c) * in_c * kernel * kernel;
  }
};

// Zero-padded cross-correlation. `bias` may be empty.
void conv2d_forward(const ConvGeometry& g, std::span<const real> input,
                    std::span<const real> weight, std::span<const real> bias,
                    std::span<real> output);
// grad_input += dL/dinput.
void conv2d_backward_input(const ConvGeometry& g, std::span<const real> grad_output,
                           std::span<const real> weight, std::span<real> grad_input);
// grad_weight += dL/dweight, grad_bias += dL/dbias (grad_bias may be empty).
void conv2d_backward_params(const ConvGeometry& g, std::span<const real> input,
                            std::span<const real> grad_output,
                            std::span<real> grad_weight, std::span<real> grad_bias);

// Per-channel batch mean and biased variance over (N, H, W).
void batch_norm_stats(const Shape& s, std::span<const real> input,
                      std::span<real> mean, std::span<real> var);
// y = gamma * (x - mean) * inv_std + beta.
void batch_norm_forward(const Shape& s, std::span<const real> input,
                        std::span<const real> mean, std::span<const real> inv_std,
                        std::span<const real> gamma, std::span<const real> beta,
                        std::span<real> output);
// Accumulating backward. With batch_stats the mean/inv_std are treated as
// functions of the input (training mode); otherwise as constants.
void batch_norm_backward(const Shape& s, std::span<const real> input,
                         std::span<const real> grad_output,
                         std::span<const real> mean, std::span<const real> inv_std,
                         std::span<const real> gamma, bool batch_stats,
                         std::span<real> grad_input, std::span<real> grad_gamma,
                         std::span<real> grad_beta);

void upsample_nearest2x(const Shape& in, std::span<const real> input,
                        std::span<real> output);
void upsample_nearest2x_backward(const Shape& in, std::span<const real> grad_output,
                                 std::span<real> grad_input);
// 2x2 mean; equals half-pixel bilinear resampling at exactly 1/2 scale.
void downsample_half(const Shape& in, std::span<const real> input,
                     std::span<real> output);
void downsample_half_backward(const Shape& in, std::span<const real> grad_output,
                              std::span<real> grad_input);
// 2x2 max pooling; argmax indices (into the input) are recorded for backward.
void max_pool2x2(const Shape& in, std::span<const real> input, std::span<real> output,
                 std::span<std::size_t> argmax);

enum class Edge { replicate, renormalize };

// Correlates one H x W plane with a separable kernel (odd lengths).
// replicate: clamp coordinates; renormalize: drop taps outside the image and
// rescale the remaining weights to their original sum.
void filter_separable(std::span<const real> plane, int height, int width,
                      std::span<const real> kernel_y, std::span<const real> kernel_x,
                      Edge edge, std::span<real> output);
// Dense odd-sized 2-D correlation with replicated edges.
void filter2d_replicate(std::span<const real> plane, int height, int width,
                        std::span<const real> kernel, int ksize, std::span<real> output);
// Median over a ksize x ksize replicated-edge window.
void median_filter(std::span<const real> plane, int height, int width, int ksize,
                   std::span<real> output);

}  // namespace sparnet::kernels
