#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparnet/image.hpp"

namespace sparnet::degrade {

enum class BlurFamily { gaussian, average, median, motion };

std::string to_string(BlurFamily f);
BlurFamily blur_family_from_string(const std::string& s);

inline constexpr double kMinScale = 16.0 / 512.0;
inline constexpr double kMaxScale = 128.0 / 512.0;
inline constexpr double kMaxNoise = 0.1 * 255.0;
inline constexpr int kMinJpegQuality = 60;
inline constexpr int kMaxJpegQuality = 85;

// Blur, downscale, noise, JPEG parameters for one HR image.
struct DegradationParams {
  BlurFamily kernel_family = BlurFamily::gaussian;
  int kernel_size = 3;          // odd; 3..15, motion 5..25
  double motion_angle_deg = 0;  // motion kernels only, [0, 180)
  double scale = kMaxScale;
  double noise_level = 0;  // sigma on the 0..255 scale
  int jpeg_quality = kMaxJpegQuality;

  // Throws ContractError when a field leaves its range.
  void validate() const;
  bool operator==(const DegradationParams&) const = default;
};

// (global_seed, sample_index) names one draw of parameters and noise.
struct SampleSeed {
  std::uint64_t global_seed = 0;
  std::uint64_t sample_index = 0;
  bool operator==(const SampleSeed&) const = default;
};

DegradationParams sample_params(SampleSeed seed);

int min_kernel_size(BlurFamily f);
int max_kernel_size(BlurFamily f);

// Normalized ksize x ksize kernels. Gaussian uses sigma = ksize / 6; the
// motion kernel is a line of length ksize through the center at `angle_deg`.
std::vector<real> gaussian_kernel_1d(int ksize);
std::vector<real> motion_kernel(int ksize, double angle_deg);

// Edge-replicated blur of every channel, result clamped to [0, 1].
Image apply_blur(const Image& img, BlurFamily family, int ksize, double angle_deg = 0);

struct Degraded {
  Image lr;
  Image lr_up;
};

int lr_side_for(int hr_side, double scale);

// lr = JPEG_q(((hr * k) downscaled by s) + n); lr_up = bicubic(lr) at hr side.
Degraded degrade(const Image& hr, const DegradationParams& p, SampleSeed seed);

struct AugmentParams {
  bool flip = false;
  double scale = 1.0;     // [1.0, 1.3]
  int quarter_turns = 0;  // 0..3
  bool operator==(const AugmentParams&) const = default;
};

AugmentParams sample_augment(SampleSeed seed);
// Flip, enlarge by `scale` (bicubic) and center-crop back, then rotate.
Image apply_augment(const Image& img, const AugmentParams& a);
Image augment(const Image& img, SampleSeed seed);

// One synthesized pair as listed in manifest.jsonl.
struct ManifestRecord {
  std::string hr_source;  // original HR file
  std::string hr_path;    // relative to the dataset root
  std::string lr_path;
  SampleSeed seed;
  DegradationParams params;
};

nlohmann::json to_json(const ManifestRecord& r);
ManifestRecord manifest_record_from_json(const nlohmann::json& j);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

struct SynthOptions {
  std::uint64_t seed = 0;
  int count = 0;       // number of pairs; sources are reused cyclically
  int hr_side = 512;   // HR images are center-cropped square and resized
  int workers = 1;
};

// Builds out_dir/{hr,lr}/NNNNNN.png plus out_dir/manifest.jsonl from the
// images in hr_dir. Output bytes depend only on the inputs and options.
std::vector<ManifestRecord> synthesize(const std::filesystem::path& hr_dir,
                                       const std::filesystem::path& out_dir,
                                       const SynthOptions& opts);

// HR preparation shared by synth and online degradation.
Image prepare_hr(const Image& img, int hr_side);

}  // namespace sparnet::degrade
