#include "sparnet/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <regex>
#include <sstream>

#include "sparnet/error.hpp"
#include "sparnet/imaging.hpp"
#include "sparnet/kernels.hpp"
#include "parallel_for.hpp"

namespace sparnet::metrics {

Image luminance(const Image& img) {
  if (img.channels() == 3) return imaging::rgb_to_luminance(img);
  SPARNET_REQUIRE(img.channels() == 1, "luminance needs a 1- or 3-channel image");
  Image y = img;
  for (auto& v : y.data()) v = 219.0 * v + 16.0;
  return y;
}

double mse_luminance(const Image& a, const Image& b) {
  SPARNET_REQUIRE(a.same_shape(b), "metric inputs differ in shape");
  const Image ya = luminance(a);
  const Image yb = luminance(b);
  double acc = 0;
  for (std::size_t i = 0; i < ya.size(); ++i) {
    const double d = ya.data()[i] - yb.data()[i];
    acc += d * d;
  }
  return acc / static_cast<double>(ya.size());
}

double psnr(const Image& a, const Image& b) {
  const double mse = mse_luminance(a, b);
  if (mse == 0) return kInfinitePsnr;
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

std::vector<double> gaussian_window_1d(int size, double sigma) {
  SPARNET_REQUIRE(size >= 1 && size % 2 == 1, "SSIM window size must be odd");
  std::vector<double> w(size);
  const int r = size / 2;
  double sum = 0;
  for (int i = -r; i <= r; ++i) {
    w[i + r] = std::exp(-(i * i) / (2 * sigma * sigma));
    sum += w[i + r];
  }
  for (auto& v : w) v /= sum;
  return w;
}

SsimResult ssim(const Image& a, const Image& b, const SsimParams& p) {
  SPARNET_REQUIRE(a.same_shape(b), "metric inputs differ in shape");
  SPARNET_REQUIRE(a.height() >= p.window && a.width() >= p.window,
                  "SSIM needs both sides >= " + std::to_string(p.window));
  const Image ya = luminance(a);
  const Image yb = luminance(b);
  const int h = ya.height();
  const int w = ya.width();
  const std::size_t n = ya.size();
  const auto win = gaussian_window_1d(p.window, p.sigma);

  std::vector<real> aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    const real x = ya.data()[i];
    const real y = yb.data()[i];
    aa[i] = x * x;
    bb[i] = y * y;
    ab[i] = x * y;
  }
  auto blur = [&](std::span<const real> src) {
    std::vector<real> out(n);
    kernels::filter_separable(src, h, w, win, win, kernels::Edge::renormalize, out);
    return out;
  };
  const auto mu_a = blur(ya.plane(0));
  const auto mu_b = blur(yb.plane(0));
  const auto e_aa = blur(aa);
  const auto e_bb = blur(bb);
  const auto e_ab = blur(ab);

  const double c1 = std::pow(p.k1 * p.dynamic_range, 2);
  const double c2 = std::pow(p.k2 * p.dynamic_range, 2);
  SsimResult r;
  r.map = Image(1, h, w);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ma = mu_a[i];
    const double mb = mu_b[i];
    const double va = e_aa[i] - ma * ma;
    const double vb = e_bb[i] - mb * mb;
    const double cov = e_ab[i] - ma * mb;
    const double s = ((2 * ma * mb + c1) * (2 * cov + c2)) /
                     ((ma * ma + mb * mb + c1) * (va + vb + c2));
    r.map.data()[i] = s;
    total += s;
  }
  r.mean = total / static_cast<double>(n);
  return r;
}

ErrorMaps error_maps(const Image& sr, const Image& hr) {
  SPARNET_REQUIRE(sr.same_shape(hr), "metric inputs differ in shape");
  const Image ya = luminance(sr);
  const Image yb = luminance(hr);
  ErrorMaps m;
  m.psnr_error = Image(1, ya.height(), ya.width());
  for (std::size_t i = 0; i < ya.size(); ++i) {
    const double d = ya.data()[i] - yb.data()[i];
    m.psnr_error.data()[i] = d * d;
  }
  m.ssim_error = ssim(sr, hr).map;
  for (auto& v : m.ssim_error.data()) v = 1.0 - v;
  return m;
}

ErrorMaps average_error_maps(const std::vector<std::pair<Image, Image>>& pairs) {
  SPARNET_REQUIRE(!pairs.empty(), "average_error_maps needs at least one pair");
  ErrorMaps acc = error_maps(pairs[0].first, pairs[0].second);
  for (std::size_t k = 1; k < pairs.size(); ++k) {
    SPARNET_REQUIRE(pairs[k].first.height() == pairs[0].first.height() &&
                        pairs[k].first.width() == pairs[0].first.width(),
                    "average_error_maps needs equal resolutions");
    const ErrorMaps m = error_maps(pairs[k].first, pairs[k].second);
    for (std::size_t i = 0; i < acc.psnr_error.size(); ++i) {
      acc.psnr_error.data()[i] += m.psnr_error.data()[i];
      acc.ssim_error.data()[i] += m.ssim_error.data()[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(pairs.size());
  for (auto& v : acc.psnr_error.data()) v *= inv;
  for (auto& v : acc.ssim_error.data()) v *= inv;
  return acc;
}

CommandMetric::CommandMetric(std::string name, std::string command)
    : name_(std::move(name)), command_(std::move(command)) {}

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  return out + "'";
}

}  // namespace

double CommandMetric::compute(const std::filesystem::path& sr,
                              const std::filesystem::path& hr) const {
  const std::string cmd = command_ + " " + shell_quote(sr.string()) + " " + shell_quote(hr.string());
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw IoError("cannot run metric command '" + command_ + "'");
  std::string output;
  std::array<char, 256> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) output += buf.data();
  const int status = pclose(pipe);
  if (status != 0)
    throw IoError("metric command '" + command_ + "' exited with status " + std::to_string(status));
  static const std::regex number(R"([-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?)");
  double value = 0;
  bool found = false;
  for (std::sregex_iterator it(output.begin(), output.end(), number), end; it != end; ++it) {
    value = std::stod(it->str());
    found = true;
  }
  if (!found) throw IoError("metric command '" + command_ + "' printed no number");
  return value;
}

CorpusReport evaluate_corpus(const std::filesystem::path& sr_dir,
                             const std::filesystem::path& hr_dir,
                             const std::vector<std::shared_ptr<const MetricPlugin>>& plugins) {
  const auto hr_files = imaging::list_images(hr_dir);
  if (hr_files.empty()) throw IoError("no images found in '" + hr_dir.string() + "'");
  CorpusReport report;
  report.images.resize(hr_files.size());
  for (const auto& p : plugins) report.plugins.push_back({p->name(), p->provenance()});

  const long n = static_cast<long>(hr_files.size());
  for (long i = 0; i < n; ++i) {
    const auto sr_path = sr_dir / hr_files[i].filename();
    if (!std::filesystem::exists(sr_path))
      throw IoError("no SR image '" + sr_path.string() + "' for '" + hr_files[i].string() + "'");
  }
  detail::parallel_for(n, 0, [&](long i) {
    const auto sr_path = sr_dir / hr_files[i].filename();
    const Image sr = imaging::read_image(sr_path);
    const Image hr = imaging::read_image(hr_files[i]);
    if (!sr.same_shape(hr)) {
      throw ContractError("'" + sr_path.string() + "' and '" + hr_files[i].string() +
                          "' differ in size");
    }
    ImageScore& s = report.images[i];
    s.file = hr_files[i].filename().string();
    s.psnr = psnr(sr, hr);
    s.ssim = ssim(sr, hr).mean;
  });
  // Plug-ins may shell out; run them serially in file order.
  for (long i = 0; i < n; ++i)
    for (const auto& p : plugins)
      report.images[i].extra.push_back({p->name(), p->compute(sr_dir / hr_files[i].filename(),
                                                              hr_files[i])});

  for (const auto& s : report.images) {
    report.mean_psnr += s.psnr;
    report.mean_ssim += s.ssim;
  }
  report.mean_psnr /= static_cast<double>(n);
  report.mean_ssim /= static_cast<double>(n);
  for (std::size_t k = 0; k < plugins.size(); ++k) {
    double acc = 0;
    for (const auto& s : report.images) acc += s.extra[k].second;
    report.extra_means.push_back({plugins[k]->name(), acc / static_cast<double>(n)});
  }
  return report;
}

nlohmann::json psnr_to_json(double v) {
  if (std::isinf(v) && v > 0) return "inf";
  return v;
}

std::string report_to_jsonl(const CorpusReport& r) {
  std::ostringstream out;
  for (const auto& s : r.images) {
    nlohmann::json j{{"file", s.file}, {"psnr", psnr_to_json(s.psnr)}, {"ssim", s.ssim}};
    for (const auto& [name, value] : s.extra) j[name] = value;
    out << j.dump() << '\n';
  }
  nlohmann::json summary{{"count", r.images.size()},
                         {"mean_psnr", psnr_to_json(r.mean_psnr)},
                         {"mean_ssim", r.mean_ssim}};
  for (const auto& [name, value] : r.extra_means) summary["mean_" + name] = value;
  nlohmann::json plugins = nlohmann::json::array();
  for (const auto& [name, prov] : r.plugins) plugins.push_back({{"name", name}, {"provenance", prov}});
  summary["plugins"] = plugins;
  out << nlohmann::json{{"summary", summary}}.dump() << '\n';
  return out.str();
}

Image false_color(const Image& map, double max_value) {
  SPARNET_REQUIRE(map.channels() == 1, "false_color needs a single-channel map");
  if (max_value <= 0) {
    max_value = 0;
    for (real v : map.data()) max_value = std::max(max_value, v);
  }
  Image out(3, map.height(), map.width());
  const std::size_t n = map.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double t = max_value > 0 ? std::clamp(map.data()[i] / max_value, 0.0, 1.0) : 0.0;
    out.data()[i] = std::clamp(1.5 - std::abs(4 * t - 3), 0.0, 1.0);
    out.data()[n + i] = std::clamp(1.5 - std::abs(4 * t - 2), 0.0, 1.0);
    out.data()[2 * n + i] = std::clamp(1.5 - std::abs(4 * t - 1), 0.0, 1.0);
  }
  return out;
}

}  // namespace sparnet::metrics
