#pragma once

#include <vector>

#include "sparnet/image.hpp"

namespace sparnet::testing {

// Naive oracles written directly from the definitions.
std::vector<double> y_plane(const Image& img);
double psnr_oracle(const Image& a, const Image& b);
// Per-pixel SSIM with an 11x11 Gaussian window clipped to the image and
// renormalized over the pixels that remain.
std::vector<double> ssim_map_oracle(const Image& a, const Image& b);

}  // namespace sparnet::testing
