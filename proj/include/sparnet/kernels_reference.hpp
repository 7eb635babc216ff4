#pragma once

#include <span>

#include "sparnet/kernels.hpp"

// Serial, loop-for-loop implementations kept as oracles for the parallel
// kernels and as the baseline in the benchmarks.
namespace sparnet::kernels::reference {

void conv2d_forward(const ConvGeometry& g, std::span<const real> input,
                    std::span<const real> weight, std::span<const real> bias,
                    std::span<real> output);
void conv2d_backward_input(const ConvGeometry& g, std::span<const real> grad_output,
                           std::span<const real> weight, std::span<real> grad_input);
void conv2d_backward_params(const ConvGeometry& g, std::span<const real> input,
                            std::span<const real> grad_output,
                            std::span<real> grad_weight, std::span<real> grad_bias);

void batch_norm_train_forward(const Shape& s, std::span<const real> input,
                              std::span<const real> gamma, std::span<const real> beta,
                              real eps, std::span<real> output);

void filter_separable(std::span<const real> plane, int height, int width,
                      std::span<const real> kernel_y, std::span<const real> kernel_x,
                      Edge edge, std::span<real> output);
void median_filter(std::span<const real> plane, int height, int width, int ksize,
                   std::span<real> output);

}  // namespace sparnet::kernels::reference
