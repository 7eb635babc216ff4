#include "support/metric_oracles.hpp"

#include <cmath>

namespace sparnet::testing {

std::vector<double> y_plane(const Image& img) {
  std::vector<double> y(static_cast<std::size_t>(img.height()) * img.width());
  for (int r = 0; r < img.height(); ++r)
    for (int c = 0; c < img.width(); ++c)
      y[r * img.width() + c] = 65.481 * img.at(0, r, c) + 128.553 * img.at(1, r, c) +
                               24.966 * img.at(2, r, c) + 16.0;
  return y;
}

double psnr_oracle(const Image& a, const Image& b) {
  const auto ya = y_plane(a), yb = y_plane(b);
  double se = 0;
  for (std::size_t i = 0; i < ya.size(); ++i) se += (ya[i] - yb[i]) * (ya[i] - yb[i]);
  return 10 * std::log10(255.0 * 255.0 / (se / ya.size()));
}

std::vector<double> ssim_map_oracle(const Image& a, const Image& b) {
  const int H = a.height(), W = a.width(), r = 5;
  const auto ya = y_plane(a), yb = y_plane(b);
  const double c1 = (0.01 * 255) * (0.01 * 255), c2 = (0.03 * 255) * (0.03 * 255);
  std::vector<double> out(ya.size());
  for (int py = 0; py < H; ++py) {
    for (int px = 0; px < W; ++px) {
      double wsum = 0, ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          const int y = py + dy, x = px + dx;
          if (y < 0 || y >= H || x < 0 || x >= W) continue;
          const double w = std::exp(-(dy * dy + dx * dx) / (2 * 1.5 * 1.5));
          const double va = ya[y * W + x], vb = yb[y * W + x];
          wsum += w;
          ma += w * va;
          mb += w * vb;
          saa += w * va * va;
          sbb += w * vb * vb;
          sab += w * va * vb;
        }
      }
      ma /= wsum;
      mb /= wsum;
      const double va = saa / wsum - ma * ma, vb = sbb / wsum - mb * mb, cov = sab / wsum - ma * mb;
      out[py * W + px] = ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
  }
  return out;
}

}  // namespace sparnet::testing
