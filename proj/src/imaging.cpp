#include "sparnet/imaging.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "sparnet/error.hpp"

namespace sparnet::imaging {
namespace {

// Taps for one output sample along one axis. Indices are clamped to the
// source range when applied.
struct Taps {
  int first = 0;
  std::vector<real> weights;
};

real linear_kernel(real x) {
  x = std::abs(x);
  return x < 1 ? 1 - x : 0;
}

std::vector<Taps> axis_taps(int in, int out, Interp mode) {
  std::vector<Taps> taps(out);
  const double scale = static_cast<double>(out) / in;
  if (mode == Interp::nearest) {
    for (int i = 0; i < out; ++i) {
      const int src = std::min(in - 1, static_cast<int>(std::floor((i + 0.5) / scale)));
      taps[i].first = src;
      taps[i].weights = {1.0};
    }
    return taps;
  }
  const double support = mode == Interp::bicubic ? 2.0 : 1.0;
  const double stretch = scale < 1.0 ? 1.0 / scale : 1.0;
  const double radius = support * stretch;
  for (int i = 0; i < out; ++i) {
    const double center = (i + 0.5) / scale - 0.5;
    const int lo = static_cast<int>(std::floor(center - radius)) + 1;
    const int hi = static_cast<int>(std::ceil(center + radius)) - 1;
    Taps& t = taps[i];
    t.first = lo;
    t.weights.resize(hi - lo + 1);
    real sum = 0;
    for (int j = lo; j <= hi; ++j) {
      const real x = (j - center) / stretch;
      const real w = mode == Interp::bicubic ? cubic_kernel(x) : linear_kernel(x);
      t.weights[j - lo] = w;
      sum += w;
    }
    for (real& w : t.weights) w /= sum;
  }
  return taps;
}

inline int clampi(int v, int lo, int hi) { return std::min(std::max(v, lo), hi); }

}  // namespace

real cubic_kernel(real x) {
  constexpr real a = -0.5;
  x = std::abs(x);
  if (x <= 1) return ((a + 2) * x - (a + 3)) * x * x + 1;
  if (x < 2) return ((a * x - 5 * a) * x + 8 * a) * x - 4 * a;
  return 0;
}

Image rgb_to_luminance(const Image& rgb) {
  SPARNET_REQUIRE(rgb.channels() == 3, "rgb_to_luminance expects a 3-channel image");
  Image y(1, rgb.height(), rgb.width());
  auto r = rgb.plane(0), g = rgb.plane(1), b = rgb.plane(2);
  auto out = y.plane(0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 65.481 * r[i] + 128.553 * g[i] + 24.966 * b[i] + 16.0;
  }
  return y;
}

Image resize(const Image& img, int target_h, int target_w, Interp mode) {
  SPARNET_REQUIRE(target_h >= 1 && target_w >= 1, "resize target must be positive");
  if (target_h == img.height() && target_w == img.width()) return img;

  const int C = img.channels(), H = img.height(), W = img.width();
  const auto tx = axis_taps(W, target_w, mode);
  const auto ty = axis_taps(H, target_h, mode);

  // Horizontal pass into (C, H, target_w), then vertical.
  Image tmp(C, H, target_w);
#pragma omp parallel for collapse(2) schedule(static)
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < target_w; ++x) {
        const Taps& t = tx[x];
        real acc = 0;
        for (std::size_t k = 0; k < t.weights.size(); ++k) {
          acc += t.weights[k] * img.at(c, y, clampi(t.first + static_cast<int>(k), 0, W - 1));
        }
        tmp.at(c, y, x) = acc;
      }
    }
  }
  Image out(C, target_h, target_w);
#pragma omp parallel for collapse(2) schedule(static)
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < target_h; ++y) {
      const Taps& t = ty[y];
      for (int x = 0; x < target_w; ++x) {
        real acc = 0;
        for (std::size_t k = 0; k < t.weights.size(); ++k) {
          acc += t.weights[k] * tmp.at(c, clampi(t.first + static_cast<int>(k), 0, H - 1), x);
        }
        out.at(c, y, x) = std::clamp<real>(acc, 0, 1);
      }
    }
  }
  return out;
}

Image clamp01(Image img) {
  for (real& v : img.data()) v = std::clamp<real>(v, 0, 1);
  return img;
}

Image flip_horizontal(const Image& img) {
  Image out(img.channels(), img.height(), img.width());
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x)
        out.at(c, y, x) = img.at(c, y, img.width() - 1 - x);
  return out;
}

Image rotate90(const Image& img, int quarter_turns) {
  quarter_turns = ((quarter_turns % 4) + 4) % 4;
  Image cur = img;
  for (int t = 0; t < quarter_turns; ++t) {
    const int H = cur.height(), W = cur.width();
    Image next(cur.channels(), W, H);
    for (int c = 0; c < cur.channels(); ++c)
      for (int y = 0; y < W; ++y)
        for (int x = 0; x < H; ++x) next.at(c, y, x) = cur.at(c, x, W - 1 - y);
    cur = std::move(next);
  }
  return cur;
}

Image crop(const Image& img, int top, int left, int height, int width) {
  SPARNET_REQUIRE(top >= 0 && left >= 0 && height >= 1 && width >= 1 &&
                      top + height <= img.height() && left + width <= img.width(),
                  "crop window outside image");
  Image out(img.channels(), height, width);
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) out.at(c, y, x) = img.at(c, top + y, left + x);
  return out;
}

Image center_crop_square(const Image& img) {
  const int side = std::min(img.height(), img.width());
  return crop(img, (img.height() - side) / 2, (img.width() - side) / 2, side, side);
}

std::vector<std::uint8_t> quantize_u8(const Image& img) {
  const int C = img.channels();
  const std::size_t hw = static_cast<std::size_t>(img.height()) * img.width();
  std::vector<std::uint8_t> out(hw * C);
  for (int c = 0; c < C; ++c) {
    auto p = img.plane(c);
    for (std::size_t i = 0; i < hw; ++i) {
      const real v = std::clamp<real>(p[i], 0, 1) * 255.0;
      out[i * C + c] = static_cast<std::uint8_t>(std::lround(v));
    }
  }
  return out;
}

Image from_u8(std::span<const std::uint8_t> interleaved, int channels, int height,
              int width) {
  Image img(channels, height, width);
  const std::size_t hw = static_cast<std::size_t>(height) * width;
  SPARNET_REQUIRE(interleaved.size() == hw * channels, "pixel buffer size mismatch");
  for (int c = 0; c < channels; ++c) {
    auto p = img.plane(c);
    for (std::size_t i = 0; i < hw; ++i) p[i] = interleaved[i * channels + c] / 255.0;
  }
  return img;
}

namespace {

cv::Mat to_mat(const Image& img) {
  SPARNET_REQUIRE(img.channels() == 1 || img.channels() == 3,
                  "only 1- and 3-channel images can be encoded");
  auto px = quantize_u8(img);
  cv::Mat m(img.height(), img.width(), img.channels() == 3 ? CV_8UC3 : CV_8UC1);
  const int C = img.channels();
  for (int y = 0; y < img.height(); ++y) {
    std::uint8_t* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < img.width(); ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * img.width() + x;
      // OpenCV stores BGR.
      for (int c = 0; c < C; ++c) row[x * C + c] = px[i * C + (C - 1 - c)];
    }
  }
  return m;
}

Image from_mat(const cv::Mat& m) {
  const int C = m.channels();
  Image img(C, m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y) {
    const std::uint8_t* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x)
      for (int c = 0; c < C; ++c) img.at(c, y, x) = row[x * C + (C - 1 - c)] / 255.0;
  }
  return img;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (m.empty()) throw IoError("cannot decode image: " + path.string());
  return from_mat(m);
}

void write_image(const Image& img, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  cv::Mat m = to_mat(img);
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), m);
  } catch (const cv::Exception& e) {
    throw IoError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write image: " + path.string());
}

Image jpeg_roundtrip(const Image& img, int quality) {
  cv::Mat m = to_mat(img);
  std::vector<std::uint8_t> buf;
  if (!cv::imencode(".jpg", m, buf, {cv::IMWRITE_JPEG_QUALITY, quality})) {
    throw IoError("JPEG encoding failed");
  }
  cv::Mat dec = cv::imdecode(buf, img.channels() == 3 ? cv::IMREAD_COLOR
                                                      : cv::IMREAD_GRAYSCALE);
  if (dec.empty()) throw IoError("JPEG decoding failed");
  return from_mat(dec);
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp") {
      out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.filename() < b.filename(); });
  return out;
}

}  // namespace sparnet::imaging
