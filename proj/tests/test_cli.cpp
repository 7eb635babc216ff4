#include <doctest.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "sparnet/config.hpp"
#include "sparnet/imaging.hpp"
#include "sparnet/trainkit.hpp"
#include "support/toy_faces.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sparnet;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run sparnet_cli(const std::string& args, const fs::path& scratch) {
  const fs::path err_file = scratch / "stderr.txt";
  const std::string cmd =
      std::string("'") + SPARNET_CLI_PATH + "' " + args + " 2>'" + err_file.string() + "'";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(err_file);
  std::stringstream ss;
  ss << in.rdbuf();
  r.err = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json error_of(const Run& r) {
  const json j = json::parse(r.err.substr(0, r.err.find('\n')));
  return j.at("error");
}

}  // namespace

TEST_CASE("synth is reproducible from the seed flag") {
  const auto dir = testing::scratch_dir("cli_synth");
  testing::write_toy_faces(dir / "faces", 3, 64, 9);
  for (const char* out : {"a", "b"}) {
    const auto r = sparnet_cli("synth --hr-dir '" + (dir / "faces").string() + "' --out-dir '" +
                                   (dir / out).string() +
                                   "' --seed 42 --count 12 --hr-side 64 --workers 2",
                               dir);
    REQUIRE(r.code == 0);
    CHECK(json::parse(r.out).at("samples") == 12);
  }
  CHECK(slurp(dir / "a" / "manifest.jsonl") == slurp(dir / "b" / "manifest.jsonl"));
  for (const auto& e : fs::directory_iterator(dir / "a" / "lr"))
    CHECK(slurp(e.path()) == slurp(dir / "b" / "lr" / e.path().filename()));

  const json m = json::parse(slurp(dir / "a" / "run_manifest.json"));
  CHECK(m.at("command") == "synth");
  CHECK(m.at("seed").at("value") == 42);
  CHECK(m.at("seed").at("source") == "flag");
  CHECK(m.at("config").at("count") == 12);
  CHECK(m.at("versions").contains("tool"));
  CHECK(m.at("outputs").size() == 3);

  // Without a seed flag one is drawn and recorded.
  const auto r = sparnet_cli("synth --hr-dir '" + (dir / "faces").string() + "' --out-dir '" +
                                 (dir / "c").string() + "' --count 2 --hr-side 64",
                             dir);
  REQUIRE(r.code == 0);
  CHECK(json::parse(slurp(dir / "c" / "run_manifest.json")).at("seed").at("source") == "entropy");
}

TEST_CASE("eval on identical directories") {
  const auto dir = testing::scratch_dir("cli_eval");
  testing::write_toy_faces(dir / "hr", 3, 32, 2);
  const auto r = sparnet_cli("eval --sr-dir '" + (dir / "hr").string() + "' --hr-dir '" +
                                 (dir / "hr").string() + "' --out-report '" +
                                 (dir / "out" / "report.jsonl").string() + "' --error-maps '" +
                                 (dir / "out" / "maps").string() + "'",
                             dir);
  REQUIRE(r.code == 0);
  const json summary = json::parse(r.out);
  CHECK(summary.at("count") == 3);
  CHECK(summary.at("mean_psnr") == "inf");
  CHECK(summary.at("mean_ssim").get<double>() == doctest::Approx(1.0).epsilon(1e-12));
  std::ifstream rep(dir / "out" / "report.jsonl");
  int lines = 0;
  for (std::string line; std::getline(rep, line);) {
    const json j = json::parse(line);
    if (j.contains("file")) {
      CHECK(j.at("psnr") == "inf");
      ++lines;
    }
  }
  CHECK(lines == 3);
  CHECK(fs::exists(dir / "out" / "maps" / "psnr_error.png"));
  CHECK(fs::exists(dir / "out" / "run_manifest.json"));
}

TEST_CASE("infer writes SR images and attention maps") {
  const auto dir = testing::scratch_dir("cli_infer");
  trainkit::save_generator(model::Generator(model::ModelConfig::tiny(128)), dir / "g.ckpt");
  imaging::write_image(testing::random_image(3, 16, 16, 4), dir / "lr" / "x.png");
  const auto r = sparnet_cli("infer --checkpoint '" + (dir / "g.ckpt").string() + "' --in-dir '" +
                                 (dir / "lr").string() + "' --out-dir '" +
                                 (dir / "sr").string() + "' --export-attention",
                             dir);
  REQUIRE(r.code == 0);
  const Image sr = imaging::read_image(dir / "sr" / "x.png");
  CHECK(sr.height() == 128);
  CHECK(sr.width() == 128);
  CHECK(fs::exists(dir / "sr" / "attention" / "x_att00.png"));
  const json m = json::parse(slurp(dir / "sr" / "run_manifest.json"));
  CHECK(m.at("command") == "infer");
  CHECK_FALSE(m.contains("seed"));
}

TEST_CASE("train, then plot the log") {
  const auto dir = testing::scratch_dir("cli_train");
  testing::write_toy_faces(dir / "faces", 3, 32, 5);
  ExperimentConfig cfg = ExperimentConfig::sparnet();
  cfg.model = model::ModelConfig::tiny(32);
  cfg.model.base_channels = 4;
  cfg.model.max_channels = 8;
  cfg.model.attention_channels = 4;
  cfg.model.n_down = cfg.model.n_up = 2;
  cfg.model.n_feat = 1;
  cfg.model.attention_count = 5;
  cfg.discriminator = model::DiscriminatorConfig::for_generator(cfg.model);
  cfg.data.hr_dir = (dir / "faces").string();
  cfg.data.lr_side = 8;
  cfg.data.eval_count = 2;
  cfg.train.batch_size = 2;
  cfg.train.eval_every = 2;
  {
    std::ofstream out(dir / "cfg.json");
    out << to_json(cfg).dump(2);
  }
  const auto r = sparnet_cli("train --config '" + (dir / "cfg.json").string() + "' --out-dir '" +
                                 (dir / "run").string() + "' --max-iters 4 --seed 9",
                             dir);
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out).at("iterations") == 4);
  const json m = json::parse(slurp(dir / "run" / "run_manifest.json"));
  CHECK(m.at("seed").at("value") == 9);
  CHECK(m.at("config").at("train").at("max_iters") == 4);

  const auto p = sparnet_cli("plot --log '" + (dir / "run" / "metrics.jsonl").string() +
                                 "' --out-png '" + (dir / "plot" / "psnr.png").string() + "'",
                             dir);
  REQUIRE(p.code == 0);
  CHECK(imaging::read_image(dir / "plot" / "psnr.png").width() == 800);
}

TEST_CASE("params prints the reference count") {
  const auto dir = testing::scratch_dir("cli_params");
  const auto r = sparnet_cli("params --preset sparnet", dir);
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out).at("parameters") == model::count_parameters(model::ModelConfig::sparnet()));
}

TEST_CASE("failures map to exit codes with a JSON error on stderr") {
  const auto dir = testing::scratch_dir("cli_errors");
  auto expect = [&](const std::string& args, int code, const std::string& type) {
    const auto r = sparnet_cli(args, dir);
    CHECK_MESSAGE(r.code == code, args);
    CHECK(error_of(r).at("type") == type);
    CHECK_FALSE(error_of(r).at("message").get<std::string>().empty());
  };
  expect("synth --out-dir x", 2, "usage");
  expect("frobnicate", 2, "usage");
  expect("params --preset nope", 3, "config");
  expect("eval --sr-dir '" + (dir / "missing").string() + "' --hr-dir '" +
             (dir / "missing").string() + "' --out-report '" + (dir / "r.jsonl").string() + "'",
         4, "io");
  {
    std::ofstream junk(dir / "junk.ckpt");
    junk << "not a checkpoint";
  }
  imaging::write_image(testing::random_image(3, 16, 16, 4), dir / "lr" / "x.png");
  expect("infer --checkpoint '" + (dir / "junk.ckpt").string() + "' --in-dir '" +
             (dir / "lr").string() + "' --out-dir '" + (dir / "sr").string() + "'",
         5, "checkpoint");
  {
    std::ofstream bad(dir / "bad.json");
    bad << R"({"model": {"variant": "sparnet", "n_down": 9}})";
  }
  expect("params --config '" + (dir / "bad.json").string() + "'", 3, "config");
}
