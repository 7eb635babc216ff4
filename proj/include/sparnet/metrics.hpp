#pragma once

#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparnet/image.hpp"

namespace sparnet::metrics {

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

// Luminance plane of an image: BT.601 Y for RGB, 219 * g + 16 for gray.
Image luminance(const Image& img);

// 10 log10(255^2 / MSE_Y); identical images give kInfinitePsnr.
double psnr(const Image& a, const Image& b);
double mse_luminance(const Image& a, const Image& b);

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 255.0;
};

struct SsimResult {
  double mean = 0;
  Image map;  // 1 x H x W local SSIM
};

// Gaussian-window SSIM on luminance. The window is truncated at the image
// border and renormalized, so the map covers every pixel and `mean` is its
// average. Requires sides >= window.
SsimResult ssim(const Image& a, const Image& b, const SsimParams& p = {});
std::vector<double> gaussian_window_1d(int size, double sigma);

struct ErrorMaps {
  Image psnr_error;  // squared luminance error
  Image ssim_error;  // 1 - local SSIM, in [0, 2]
};

ErrorMaps error_maps(const Image& sr, const Image& hr);
ErrorMaps average_error_maps(const std::vector<std::pair<Image, Image>>& pairs);

// External perceptual metrics (LPIPS, FID, ...) plug in through this
// interface; evaluate_corpus records each plug-in's name and provenance.
class MetricPlugin {
 public:
  virtual ~MetricPlugin() = default;
  virtual std::string name() const = 0;
  virtual std::string provenance() const = 0;
  virtual double compute(const std::filesystem::path& sr,
                         const std::filesystem::path& hr) const = 0;
};

// Runs `command <sr> <hr>` through the shell and parses the last number
// printed on stdout.
class CommandMetric : public MetricPlugin {
 public:
  CommandMetric(std::string name, std::string command);
  std::string name() const override { return name_; }
  std::string provenance() const override { return "command: " + command_; }
  double compute(const std::filesystem::path& sr,
                 const std::filesystem::path& hr) const override;

 private:
  std::string name_;
  std::string command_;
};

struct ImageScore {
  std::string file;
  double psnr = 0;
  double ssim = 0;
  std::vector<std::pair<std::string, double>> extra;
};

struct CorpusReport {
  std::vector<ImageScore> images;  // sorted by filename
  double mean_psnr = 0;
  double mean_ssim = 0;
  std::vector<std::pair<std::string, std::string>> plugins;  // name, provenance
  std::vector<std::pair<std::string, double>> extra_means;
};

// Pairs files with equal names in both directories.
CorpusReport evaluate_corpus(
    const std::filesystem::path& sr_dir, const std::filesystem::path& hr_dir,
    const std::vector<std::shared_ptr<const MetricPlugin>>& plugins = {});

// JSON-lines: one {"file",...} record per image then one {"summary": ...}.
// Infinite PSNR is written as the string "inf".
std::string report_to_jsonl(const CorpusReport& r);
nlohmann::json psnr_to_json(double v);

// False-color rendering (blue -> red) normalized to [0, max(map)].
Image false_color(const Image& map, double max_value = -1);

}  // namespace sparnet::metrics
