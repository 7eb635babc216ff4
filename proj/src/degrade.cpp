#include "sparnet/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "sparnet/error.hpp"
#include "sparnet/imaging.hpp"
#include "sparnet/kernels.hpp"
#include "sparnet/rng.hpp"
#include "parallel_for.hpp"

namespace sparnet::degrade {

using imaging::Interp;

std::string to_string(BlurFamily f) {
  switch (f) {
    case BlurFamily::gaussian: return "gaussian";
    case BlurFamily::average: return "average";
    case BlurFamily::median: return "median";
    case BlurFamily::motion: return "motion";
  }
  return "?";
}

BlurFamily blur_family_from_string(const std::string& s) {
  for (BlurFamily f : {BlurFamily::gaussian, BlurFamily::average, BlurFamily::median,
                       BlurFamily::motion})
    if (to_string(f) == s) return f;
  throw ConfigError("unknown blur family '" + s + "'");
}

int min_kernel_size(BlurFamily f) { return f == BlurFamily::motion ? 5 : 3; }
int max_kernel_size(BlurFamily f) { return f == BlurFamily::motion ? 25 : 15; }

void DegradationParams::validate() const {
  SPARNET_REQUIRE(kernel_size % 2 == 1, "blur kernel size must be odd, got " +
                                            std::to_string(kernel_size));
  SPARNET_REQUIRE(kernel_size >= min_kernel_size(kernel_family) &&
                      kernel_size <= max_kernel_size(kernel_family),
                  "kernel size " + std::to_string(kernel_size) + " outside the " +
                      to_string(kernel_family) + " range");
  SPARNET_REQUIRE(motion_angle_deg >= 0 && motion_angle_deg < 180,
                  "motion angle must lie in [0, 180)");
  SPARNET_REQUIRE(scale >= kMinScale && scale <= kMaxScale, "scale outside [16/512, 128/512]");
  SPARNET_REQUIRE(noise_level >= 0 && noise_level <= kMaxNoise, "noise level outside [0, 25.5]");
  SPARNET_REQUIRE(jpeg_quality >= kMinJpegQuality && jpeg_quality <= kMaxJpegQuality,
                  "JPEG quality outside [60, 85]");
}

DegradationParams sample_params(SampleSeed seed) {
  Rng rng(seed.global_seed, seed.sample_index, "degrade.params");
  DegradationParams p;
  p.kernel_family = static_cast<BlurFamily>(rng.uniform_int(0, 3));
  const int lo = min_kernel_size(p.kernel_family);
  const int hi = max_kernel_size(p.kernel_family);
  p.kernel_size = lo + 2 * static_cast<int>(rng.uniform_int(0, (hi - lo) / 2));
  const double angle = rng.uniform(0.0, 180.0);
  p.motion_angle_deg = p.kernel_family == BlurFamily::motion ? angle : 0.0;
  p.scale = rng.uniform(kMinScale, kMaxScale);
  p.noise_level = rng.uniform(0.0, kMaxNoise);
  p.jpeg_quality = static_cast<int>(rng.uniform_int(kMinJpegQuality, kMaxJpegQuality));
  return p;
}

std::vector<real> gaussian_kernel_1d(int ksize) {
  SPARNET_REQUIRE(ksize >= 1 && ksize % 2 == 1, "gaussian kernel size must be odd");
  const real sigma = ksize / 6.0;
  const int r = ksize / 2;
  std::vector<real> k(ksize);
  real sum = 0;
  for (int i = -r; i <= r; ++i) {
    k[i + r] = std::exp(-(i * i) / (2 * sigma * sigma));
    sum += k[i + r];
  }
  for (auto& v : k) v /= sum;
  return k;
}

std::vector<real> motion_kernel(int ksize, double angle_deg) {
  SPARNET_REQUIRE(ksize >= 1 && ksize % 2 == 1, "motion kernel size must be odd");
  std::vector<real> k(static_cast<std::size_t>(ksize) * ksize, 0.0);
  const real c = (ksize - 1) / 2.0;
  const real theta = angle_deg * std::numbers::pi / 180.0;
  const real dx = std::cos(theta);
  const real dy = -std::sin(theta);  // image rows grow downwards
  // Dense samples along the segment, splatted bilinearly onto the grid.
  const int samples = 8 * ksize;
  for (int i = 0; i <= samples; ++i) {
    const real t = -c + 2 * c * i / samples;
    const real x = c + t * dx;
    const real y = c + t * dy;
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const real fx = x - x0;
    const real fy = y - y0;
    for (int oy = 0; oy <= 1; ++oy)
      for (int ox = 0; ox <= 1; ++ox) {
        const int xx = x0 + ox;
        const int yy = y0 + oy;
        if (xx < 0 || yy < 0 || xx >= ksize || yy >= ksize) continue;
        k[static_cast<std::size_t>(yy) * ksize + xx] +=
            (ox ? fx : 1 - fx) * (oy ? fy : 1 - fy);
      }
  }
  real sum = 0;
  for (real v : k) sum += v;
  for (auto& v : k) v /= sum;
  return k;
}

Image apply_blur(const Image& img, BlurFamily family, int ksize, double angle_deg) {
  SPARNET_REQUIRE(ksize % 2 == 1, "blur kernel size must be odd, got " + std::to_string(ksize));
  SPARNET_REQUIRE(ksize >= 1, "blur kernel size must be positive");
  Image out(img.channels(), img.height(), img.width());
  const int h = img.height();
  const int w = img.width();
  std::vector<real> k1d;
  std::vector<real> k2d;
  if (family == BlurFamily::gaussian) k1d = gaussian_kernel_1d(ksize);
  if (family == BlurFamily::average) k1d.assign(ksize, 1.0 / ksize);
  if (family == BlurFamily::motion) k2d = motion_kernel(ksize, angle_deg);
  for (int c = 0; c < img.channels(); ++c) {
    switch (family) {
      case BlurFamily::gaussian:
      case BlurFamily::average:
        kernels::filter_separable(img.plane(c), h, w, k1d, k1d, kernels::Edge::replicate,
                                  out.plane(c));
        break;
      case BlurFamily::motion:
        kernels::filter2d_replicate(img.plane(c), h, w, k2d, ksize, out.plane(c));
        break;
      case BlurFamily::median:
        kernels::median_filter(img.plane(c), h, w, ksize, out.plane(c));
        break;
    }
  }
  return imaging::clamp01(std::move(out));
}

int lr_side_for(int hr_side, double scale) {
  return std::max(1, static_cast<int>(std::lround(hr_side * scale)));
}

Degraded degrade(const Image& hr, const DegradationParams& p, SampleSeed seed) {
  SPARNET_REQUIRE(hr.height() == hr.width(),
                  "degrade needs a square image, got " + std::to_string(hr.height()) + "x" +
                      std::to_string(hr.width()));
  p.validate();
  const int side = hr.height();
  const int lr_side = lr_side_for(side, p.scale);
  Image blurred = apply_blur(hr, p.kernel_family, p.kernel_size, p.motion_angle_deg);
  Image lr = imaging::resize(blurred, lr_side, lr_side, Interp::bicubic);

  Rng rng(seed.global_seed, seed.sample_index, "degrade.noise");
  for (auto& v : lr.data()) {
    const double noisy = v * 255.0 + p.noise_level * rng.normal();
    v = std::round(std::clamp(noisy, 0.0, 255.0)) / 255.0;
  }
  lr = imaging::jpeg_roundtrip(lr, p.jpeg_quality);

  Degraded out;
  out.lr_up = imaging::resize(lr, side, side, Interp::bicubic);
  out.lr = std::move(lr);
  return out;
}

AugmentParams sample_augment(SampleSeed seed) {
  Rng rng(seed.global_seed, seed.sample_index, "augment");
  AugmentParams a;
  a.flip = rng.bernoulli(0.5);
  a.scale = rng.uniform(1.0, 1.3);
  a.quarter_turns = static_cast<int>(rng.uniform_int(0, 3));
  return a;
}

Image apply_augment(const Image& img, const AugmentParams& a) {
  SPARNET_REQUIRE(img.height() == img.width(), "augment needs a square image");
  SPARNET_REQUIRE(a.scale >= 1.0 && a.scale <= 1.3, "augment scale outside [1.0, 1.3]");
  const int side = img.height();
  Image out = a.flip ? imaging::flip_horizontal(img) : img;
  const int big = static_cast<int>(std::lround(side * a.scale));
  if (big != side) {
    out = imaging::resize(out, big, big, Interp::bicubic);
    const int off = (big - side) / 2;
    out = imaging::crop(out, off, off, side, side);
  }
  return imaging::rotate90(out, a.quarter_turns);
}

Image augment(const Image& img, SampleSeed seed) {
  return apply_augment(img, sample_augment(seed));
}

nlohmann::json to_json(const ManifestRecord& r) {
  return {{"hr_source", r.hr_source},
          {"hr", r.hr_path},
          {"lr", r.lr_path},
          {"global_seed", r.seed.global_seed},
          {"sample_index", r.seed.sample_index},
          {"params",
           {{"kernel_family", to_string(r.params.kernel_family)},
            {"kernel_size", r.params.kernel_size},
            {"motion_angle_deg", r.params.motion_angle_deg},
            {"scale", r.params.scale},
            {"noise_level", r.params.noise_level},
            {"jpeg_quality", r.params.jpeg_quality}}}};
}

ManifestRecord manifest_record_from_json(const nlohmann::json& j) {
  try {
    ManifestRecord r;
    r.hr_source = j.at("hr_source").get<std::string>();
    r.hr_path = j.at("hr").get<std::string>();
    r.lr_path = j.at("lr").get<std::string>();
    r.seed.global_seed = j.at("global_seed").get<std::uint64_t>();
    r.seed.sample_index = j.at("sample_index").get<std::uint64_t>();
    const auto& p = j.at("params");
    r.params.kernel_family = blur_family_from_string(p.at("kernel_family").get<std::string>());
    r.params.kernel_size = p.at("kernel_size").get<int>();
    r.params.motion_angle_deg = p.at("motion_angle_deg").get<double>();
    r.params.scale = p.at("scale").get<double>();
    r.params.noise_level = p.at("noise_level").get<double>();
    r.params.jpeg_quality = p.at("jpeg_quality").get<int>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed manifest record: ") + e.what());
  }
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  std::vector<ManifestRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(manifest_record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("manifest line " + std::to_string(out.size() + 1) + ": " + e.what());
    }
  }
  return out;
}

Image prepare_hr(const Image& img, int hr_side) {
  Image sq = img.height() == img.width() ? img : imaging::center_crop_square(img);
  return imaging::resize(sq, hr_side, hr_side, Interp::bicubic);
}

std::vector<ManifestRecord> synthesize(const std::filesystem::path& hr_dir,
                                       const std::filesystem::path& out_dir,
                                       const SynthOptions& opts) {
  if (opts.count < 0) throw ConfigError("synth: count must be non-negative");
  if (opts.hr_side < 1) throw ConfigError("synth: hr_side must be positive");
  const auto sources = imaging::list_images(hr_dir);
  if (sources.empty()) throw IoError("no images found in '" + hr_dir.string() + "'");

  std::vector<Image> prepared(sources.size());
  const auto n_src = static_cast<long>(sources.size());
  detail::parallel_for(n_src, std::max(1, opts.workers), [&](long i) {
    // Quantized like the HR file on disk, so the manifest alone regenerates the LR.
    const Image hr = prepare_hr(imaging::read_image(sources[i]), opts.hr_side);
    prepared[i] = imaging::from_u8(imaging::quantize_u8(hr), hr.channels(), hr.height(),
                                   hr.width());
  });

  std::filesystem::create_directories(out_dir / "hr");
  std::filesystem::create_directories(out_dir / "lr");
  std::vector<ManifestRecord> records(opts.count);
  detail::parallel_for(opts.count, std::max(1, opts.workers), [&](long i) {
    const std::size_t src = static_cast<std::size_t>(i) % sources.size();
    ManifestRecord& r = records[i];
    char name[32];
    std::snprintf(name, sizeof name, "%06ld.png", i);
    r.hr_source = sources[src].filename().string();
    r.hr_path = std::string("hr/") + name;
    r.lr_path = std::string("lr/") + name;
    r.seed = {opts.seed, static_cast<std::uint64_t>(i)};
    r.params = sample_params(r.seed);
    Degraded d = degrade(prepared[src], r.params, r.seed);
    imaging::write_image(prepared[src], out_dir / r.hr_path);
    imaging::write_image(d.lr, out_dir / r.lr_path);
  });

  std::ofstream manifest(out_dir / "manifest.jsonl", std::ios::trunc);
  if (!manifest) throw IoError("cannot write manifest in '" + out_dir.string() + "'");
  for (const auto& r : records) manifest << to_json(r).dump() << '\n';
  return records;
}

}  // namespace sparnet::degrade
