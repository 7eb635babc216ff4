// sparnet: synth | train | infer | eval | plot | params
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include "sparnet/checkpoint.hpp"
#include "sparnet/config.hpp"
#include "sparnet/degrade.hpp"
#include "sparnet/error.hpp"
#include "sparnet/imaging.hpp"
#include "sparnet/metrics.hpp"
#include "sparnet/model.hpp"
#include "sparnet/rng.hpp"
#include "sparnet/trainkit.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sparnet;

namespace {

constexpr const char* kToolVersion = "0.1.0";

struct SeedChoice {
  std::uint64_t value = 0;
  std::string source;
};

SeedChoice resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return {*flag, "flag"};
  std::random_device rd;
  const std::uint64_t v = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  return {v, "entropy"};
}

std::string relative_to(const fs::path& p, const fs::path& base) {
  const auto rel = fs::relative(p, base);
  return rel.empty() ? p.string() : rel.generic_string();
}

void write_run_manifest(const fs::path& dir, const std::string& command, const json& config,
                        const std::optional<SeedChoice>& seed,
                        const std::vector<fs::path>& outputs) {
  fs::create_directories(dir);
  json m{{"command", command},
         {"config", config},
         {"versions",
          {{"tool", kToolVersion}, {"checkpoint_format", CheckpointContainer::kFormatVersion}}}};
  if (seed) m["seed"] = {{"value", seed->value}, {"source", seed->source}};
  json outs = json::array();
  for (const auto& p : outputs) outs.push_back(relative_to(p, dir));
  m["outputs"] = outs;
  std::ofstream out(dir / "run_manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write run manifest in '" + dir.string() + "'");
  out << m.dump(2) << '\n';
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string hr_dir, out_dir;
  std::optional<std::uint64_t> seed;
  int count = 0;
  int hr_side = 512;
  int workers = 1;
};

int cmd_synth(const SynthArgs& a) {
  const SeedChoice seed = resolve_seed(a.seed);
  degrade::SynthOptions opts{seed.value, a.count, a.hr_side, a.workers};
  const auto records = degrade::synthesize(a.hr_dir, a.out_dir, opts);
  const fs::path out(a.out_dir);
  std::vector<fs::path> outputs{out / "manifest.jsonl", out / "hr", out / "lr"};
  write_run_manifest(out, "synth",
                     {{"hr_dir", a.hr_dir}, {"count", a.count}, {"hr_side", a.hr_side}},
                     seed, outputs);
  std::cout << json{{"samples", records.size()}, {"manifest", (out / "manifest.jsonl").string()}}
                   .dump()
            << '\n';
  return 0;
}

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::optional<int> max_iters;
};

int cmd_train(const TrainArgs& a) {
  ExperimentConfig cfg = load_experiment_config(a.config);
  if (!a.out_dir.empty()) cfg.train.out_dir = a.out_dir;
  if (a.max_iters) cfg.train.max_iters = *a.max_iters;
  std::optional<SeedChoice> seed;
  if (a.seed) {
    // One flag drives every stream: data order, augmentation, weight init.
    seed = SeedChoice{*a.seed, "flag"};
    cfg.train.seed = *a.seed;
    cfg.model.seed = *a.seed;
    cfg.discriminator.seed = splitmix64(*a.seed ^ 0xd15cULL);
  } else {
    seed = SeedChoice{cfg.train.seed, "config"};
  }
  cfg.validate();
  const auto result = trainkit::train(cfg);
  write_run_manifest(cfg.train.out_dir, "train", to_json(cfg), seed,
                     {result.checkpoint, result.log});
  std::cout << json{{"checkpoint", result.checkpoint.string()},
                    {"log", result.log.string()},
                    {"iterations", result.iterations}}
                   .dump()
            << '\n';
  return 0;
}

struct InferArgs {
  std::string checkpoint, in_dir, out_dir;
  bool export_attention = false;
};

int cmd_infer(const InferArgs& a) {
  const auto g = trainkit::load_generator(a.checkpoint);
  const auto inputs = imaging::list_images(a.in_dir);
  if (inputs.empty()) throw IoError("no images found in '" + a.in_dir + "'");
  const fs::path out(a.out_dir);
  std::vector<fs::path> outputs;
  for (const auto& in : inputs) {
    const auto r = trainkit::infer(g, imaging::read_image(in));
    const fs::path sr_path = out / (in.stem().string() + ".png");
    imaging::write_image(r.sr, sr_path);
    outputs.push_back(sr_path);
    if (a.export_attention) {
      for (std::size_t j = 0; j < r.attention.size(); ++j) {
        char name[32];
        std::snprintf(name, sizeof name, "_att%02zu.png", j);
        const fs::path p = out / "attention" / (in.stem().string() + name);
        imaging::write_image(r.attention[j], p);
        outputs.push_back(p);
      }
    }
  }
  write_run_manifest(out, "infer",
                     {{"checkpoint", a.checkpoint},
                      {"in_dir", a.in_dir},
                      {"export_attention", a.export_attention},
                      {"model", to_json(g.config())}},
                     std::nullopt, outputs);
  std::cout << json{{"images", inputs.size()}, {"out_dir", a.out_dir}}.dump() << '\n';
  return 0;
}

struct EvalArgs {
  std::string sr_dir, hr_dir, out_report, error_maps;
  std::vector<std::string> metrics;
};

int cmd_eval(const EvalArgs& a) {
  std::vector<std::shared_ptr<const metrics::MetricPlugin>> plugins;
  for (const auto& spec : a.metrics) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
      throw ConfigError("--metric expects name=command, got '" + spec + "'");
    plugins.push_back(
        std::make_shared<metrics::CommandMetric>(spec.substr(0, eq), spec.substr(eq + 1)));
  }
  const auto report = metrics::evaluate_corpus(a.sr_dir, a.hr_dir, plugins);
  const fs::path report_path(a.out_report);
  if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
  {
    std::ofstream out(report_path, std::ios::trunc);
    if (!out) throw IoError("cannot write report '" + a.out_report + "'");
    out << metrics::report_to_jsonl(report);
  }
  std::vector<fs::path> outputs{report_path};
  if (!a.error_maps.empty()) {
    std::vector<std::pair<Image, Image>> pairs;
    for (const auto& s : report.images)
      pairs.push_back({imaging::read_image(fs::path(a.sr_dir) / s.file),
                       imaging::read_image(fs::path(a.hr_dir) / s.file)});
    const auto maps = metrics::average_error_maps(pairs);
    const fs::path dir(a.error_maps);
    imaging::write_image(metrics::false_color(maps.psnr_error), dir / "psnr_error.png");
    imaging::write_image(metrics::false_color(maps.ssim_error), dir / "ssim_error.png");
    outputs.push_back(dir / "psnr_error.png");
    outputs.push_back(dir / "ssim_error.png");
  }
  const fs::path manifest_dir =
      report_path.has_parent_path() ? report_path.parent_path() : fs::path(".");
  write_run_manifest(manifest_dir, "eval",
                     {{"sr_dir", a.sr_dir}, {"hr_dir", a.hr_dir}, {"metrics", a.metrics}},
                     std::nullopt, outputs);
  std::cout << json{{"count", report.images.size()},
                    {"mean_psnr", metrics::psnr_to_json(report.mean_psnr)},
                    {"mean_ssim", report.mean_ssim}}
                   .dump()
            << '\n';
  return 0;
}

struct PlotArgs {
  std::string log, out_png;
  std::vector<std::string> series{"eval_psnr", "baseline_psnr"};
};

int cmd_plot(const PlotArgs& a) {
  const auto records = trainkit::read_log(a.log);
  struct Series {
    std::string name;
    std::vector<std::pair<double, double>> points;
  };
  std::vector<Series> series;
  for (const auto& name : a.series) {
    Series s{name, {}};
    for (const auto& r : records)
      if (r.contains("iter") && r.contains(name) && r[name].is_number())
        s.points.push_back({r["iter"].get<double>(), r[name].get<double>()});
    if (!s.points.empty()) series.push_back(std::move(s));
  }
  if (series.empty()) throw ConfigError("log '" + a.log + "' has no records for the requested series");

  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 - y0 < 1e-9) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;

  const int W = 800, H = 500, L = 80, R = 20, T = 40, B = 60;
  cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));
  auto px = [&](double x) { return L + static_cast<int>(std::lround((x - x0) / (x1 - x0) * (W - L - R))); };
  auto py = [&](double y) { return H - B - static_cast<int>(std::lround((y - y0) / (y1 - y0) * (H - T - B))); };
  const cv::Scalar black(0, 0, 0);
  cv::rectangle(img, {L, T}, {W - R, H - B}, black, 1);
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5;
    const double yv = y0 + (y1 - y0) * i / 5;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.0f", xv);
    cv::putText(img, buf, {px(xv) - 15, H - B + 20}, cv::FONT_HERSHEY_SIMPLEX, 0.4, black, 1);
    std::snprintf(buf, sizeof buf, "%.2f", yv);
    cv::putText(img, buf, {10, py(yv) + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, black, 1);
    cv::line(img, {L, py(yv)}, {L + 5, py(yv)}, black, 1);
  }
  cv::putText(img, "iteration", {W / 2 - 30, H - 15}, cv::FONT_HERSHEY_SIMPLEX, 0.5, black, 1);
  const std::vector<cv::Scalar> colors{{200, 60, 20}, {30, 30, 200}, {40, 160, 40}, {150, 0, 150}};
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& c = colors[k % colors.size()];
    const auto& pts = series[k].points;
    for (std::size_t i = 1; i < pts.size(); ++i)
      cv::line(img, {px(pts[i - 1].first), py(pts[i - 1].second)},
               {px(pts[i].first), py(pts[i].second)}, c, 2, cv::LINE_AA);
    for (const auto& [x, y] : pts) cv::circle(img, {px(x), py(y)}, 3, c, -1, cv::LINE_AA);
    cv::putText(img, series[k].name, {L + 10, T + 18 + 18 * static_cast<int>(k)},
                cv::FONT_HERSHEY_SIMPLEX, 0.5, c, 1, cv::LINE_AA);
  }
  const fs::path out(a.out_png);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  if (!cv::imwrite(out.string(), img)) throw IoError("cannot write plot '" + a.out_png + "'");
  write_run_manifest(out.has_parent_path() ? out.parent_path() : fs::path("."), "plot",
                     {{"log", a.log}, {"series", a.series}}, std::nullopt, {out});
  std::cout << json{{"plot", a.out_png}, {"series", series.size()}}.dump() << '\n';
  return 0;
}

struct ParamsArgs {
  std::string config;
  std::string preset = "sparnet";
};

int cmd_params(const ParamsArgs& a) {
  model::ModelConfig cfg;
  if (!a.config.empty()) {
    cfg = load_experiment_config(a.config).model;
  } else if (a.preset == "sparnet") {
    cfg = model::ModelConfig::sparnet();
  } else if (a.preset == "sparnethd") {
    cfg = model::ModelConfig::sparnethd();
  } else {
    throw ConfigError("unknown preset '" + a.preset + "'");
  }
  const auto n = model::count_parameters(cfg);
  std::cout << json{{"model", to_json(cfg)}, {"parameters", n}, {"millions", n / 1e6}}.dump()
            << '\n';
  return 0;
}

std::string error_type(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const IoError*>(&e)) return "io";
  if (dynamic_cast<const CheckpointError*>(&e)) return "checkpoint";
  if (dynamic_cast<const TrainingError*>(&e)) return "training";
  if (dynamic_cast<const ContractError*>(&e)) return "contract";
  return "internal";
}

int exit_code_for(const std::string& type) {
  if (type == "config") return 3;
  if (type == "io") return 4;
  if (type == "checkpoint") return 5;
  if (type == "training") return 6;
  if (type == "contract") return 7;
  return 1;
}

void report_error(const std::string& type, const std::string& message) {
  std::cerr << json{{"error", {{"type", type}, {"message", message}}}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Face super-resolution toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Build degraded LR/HR pairs and a manifest");
  s->add_option("--hr-dir", synth.hr_dir, "Directory of HR face images")->required();
  s->add_option("--out-dir", synth.out_dir, "Output dataset directory")->required();
  s->add_option("--seed", synth.seed, "Global seed (default: entropy, recorded)");
  s->add_option("--count", synth.count, "Number of pairs")->required()->check(CLI::NonNegativeNumber);
  s->add_option("--hr-side", synth.hr_side, "HR side length")->check(CLI::PositiveNumber);
  s->add_option("--workers", synth.workers, "Worker threads")->check(CLI::PositiveNumber);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train SPARNet or SPARNetHD from a JSON config");
  t->add_option("--config", train.config, "Experiment config (JSON)")->required();
  t->add_option("--seed", train.seed, "Overrides train/model seeds");
  t->add_option("--out-dir", train.out_dir, "Overrides train.out_dir");
  t->add_option("--max-iters", train.max_iters, "Overrides train.max_iters");

  InferArgs infer;
  auto* i = app.add_subcommand("infer", "Super-resolve a directory of LR images");
  i->add_option("--checkpoint", infer.checkpoint, "Generator or trainer checkpoint")->required();
  i->add_option("--in-dir", infer.in_dir, "LR images")->required();
  i->add_option("--out-dir", infer.out_dir, "SR output directory")->required();
  i->add_flag("--export-attention", infer.export_attention, "Also write per-FAU attention maps");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Luminance PSNR/SSIM of SR images against HR");
  e->add_option("--sr-dir", eval.sr_dir, "SR images")->required();
  e->add_option("--hr-dir", eval.hr_dir, "Ground-truth images (same filenames)")->required();
  e->add_option("--out-report", eval.out_report, "JSON-lines report path")->required();
  e->add_option("--error-maps", eval.error_maps, "Directory for averaged error-map PNGs");
  e->add_option("--metric", eval.metrics, "External metric as name=command (repeatable)");

  PlotArgs plot;
  auto* p = app.add_subcommand("plot", "Plot evaluation PSNR against iteration");
  p->add_option("--log", plot.log, "metrics.jsonl from train")->required();
  p->add_option("--out-png", plot.out_png, "Output PNG")->required();
  p->add_option("--series", plot.series, "Log fields to draw");

  ParamsArgs params;
  auto* c = app.add_subcommand("params", "Print the trainable parameter count");
  c->add_option("--config", params.config, "Experiment config (JSON)");
  c->add_option("--preset", params.preset, "sparnet or sparnethd");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForVersion& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    report_error("usage", ex.what());
    return 2;
  }

  try {
    if (*s) return cmd_synth(synth);
    if (*t) return cmd_train(train);
    if (*i) return cmd_infer(infer);
    if (*e) return cmd_eval(eval);
    if (*p) return cmd_plot(plot);
    if (*c) return cmd_params(params);
  } catch (const std::exception& ex) {
    const std::string type = error_type(ex);
    report_error(type, ex.what());
    return exit_code_for(type);
  }
  return 1;
}
