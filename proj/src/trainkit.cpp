#include "sparnet/trainkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "sparnet/error.hpp"
#include "sparnet/imaging.hpp"
#include "sparnet/metrics.hpp"
#include "sparnet/rng.hpp"
#include "parallel_for.hpp"

namespace sparnet::trainkit {

using imaging::Interp;
namespace fs = std::filesystem;

namespace {

Image quantize(Image img) {
  for (auto& v : img.data()) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return img;
}

std::string describe_items(const PairSource& source, const std::vector<std::size_t>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(items[i]) + ":" + source.describe(items[i]);
  }
  return out;
}

void require_finite(real v, const char* what, std::int64_t iteration, const PairSource& source,
                    const Batch& batch) {
  if (std::isfinite(v)) return;
  throw TrainingError(std::string("non-finite ") + what + " at iteration " +
                      std::to_string(iteration) + "; batch items [" +
                      describe_items(source, batch.items) + "]");
}

std::string checkpoint_name(std::int64_t iteration) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "checkpoint_%08lld.ckpt", static_cast<long long>(iteration));
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Pair sources

BicubicPairSource::BicubicPairSource(std::vector<Image> hr, std::vector<std::string> names,
                                     int lr_side)
    : hr_(std::move(hr)), names_(std::move(names)), lr_side_(lr_side) {
  SPARNET_REQUIRE(!hr_.empty(), "pair source needs at least one image");
  SPARNET_REQUIRE(names_.size() == hr_.size(), "pair source names/images size mismatch");
  SPARNET_REQUIRE(lr_side >= 1, "lr_side must be positive");
}

TrainingPair BicubicPairSource::make(std::size_t item, degrade::SampleSeed seed,
                                     bool augment) const {
  Image hr = augment ? degrade::augment(hr_.at(item), seed) : hr_.at(item);
  const int side = hr.height();
  Image lr = quantize(imaging::resize(hr, lr_side_, lr_side_, Interp::bicubic));
  return {imaging::resize(lr, side, side, Interp::bicubic), std::move(hr)};
}

DegradePairSource::DegradePairSource(std::vector<Image> hr, std::vector<std::string> names)
    : hr_(std::move(hr)), names_(std::move(names)) {
  SPARNET_REQUIRE(!hr_.empty(), "pair source needs at least one image");
  SPARNET_REQUIRE(names_.size() == hr_.size(), "pair source names/images size mismatch");
}

TrainingPair DegradePairSource::make(std::size_t item, degrade::SampleSeed seed,
                                     bool augment) const {
  Image hr = augment ? degrade::augment(hr_.at(item), seed) : hr_.at(item);
  degrade::Degraded d = degrade::degrade(hr, degrade::sample_params(seed), seed);
  return {std::move(d.lr_up), std::move(hr)};
}

ManifestPairSource::ManifestPairSource(const fs::path& manifest)
    : root_(manifest.parent_path()), records_(degrade::read_manifest(manifest)) {
  if (records_.empty()) throw IoError("manifest '" + manifest.string() + "' lists no samples");
}

TrainingPair ManifestPairSource::make(std::size_t item, degrade::SampleSeed seed,
                                      bool augment) const {
  const auto& r = records_.at(item);
  Image hr = imaging::read_image(root_ / r.hr_path);
  Image lr = imaging::read_image(root_ / r.lr_path);
  SPARNET_REQUIRE(hr.height() == hr.width(), "manifest HR image is not square: " + r.hr_path);
  Image lr_up = imaging::resize(lr, hr.height(), hr.width(), Interp::bicubic);
  if (augment) {
    const auto a = degrade::sample_augment(seed);
    hr = degrade::apply_augment(hr, a);
    lr_up = degrade::apply_augment(lr_up, a);
  }
  return {std::move(lr_up), std::move(hr)};
}

std::string ManifestPairSource::describe(std::size_t item) const {
  return records_.at(item).hr_path;
}

std::vector<Image> load_hr_images(const fs::path& dir, int hr_side,
                                  std::vector<std::string>* names) {
  const auto files = imaging::list_images(dir);
  if (files.empty()) throw IoError("no images found in '" + dir.string() + "'");
  std::vector<Image> out(files.size());
  const long n = static_cast<long>(files.size());
  detail::parallel_for(n, 0, [&](long i) {
    out[i] = degrade::prepare_hr(imaging::read_image(files[i]), hr_side);
  });
  if (names) {
    names->clear();
    for (const auto& f : files) names->push_back(f.filename().string());
  }
  return out;
}

std::unique_ptr<PairSource> make_pair_source(const DataConfig& data, int hr_side) {
  if (data.source == "manifest") {
    if (data.manifest.empty()) throw ConfigError("data.manifest is required for source 'manifest'");
    return std::make_unique<ManifestPairSource>(data.manifest);
  }
  if (data.hr_dir.empty()) throw ConfigError("data.hr_dir is required for source '" + data.source + "'");
  std::vector<std::string> names;
  auto images = load_hr_images(data.hr_dir, hr_side, &names);
  if (data.source == "bicubic")
    return std::make_unique<BicubicPairSource>(std::move(images), std::move(names), data.lr_side);
  if (data.source == "degrade")
    return std::make_unique<DegradePairSource>(std::move(images), std::move(names));
  throw ConfigError("unknown data source '" + data.source + "'");
}

// ---------------------------------------------------------------------------
// Batches

Batch make_batch(const PairSource& source, std::uint64_t seed, std::int64_t iteration,
                 int batch_size, bool augment, int workers) {
  SPARNET_REQUIRE(batch_size >= 1, "batch size must be positive");
  Batch b;
  b.iteration = iteration;
  Rng pick(seed, static_cast<std::uint64_t>(iteration), "batch.items");
  for (int s = 0; s < batch_size; ++s)
    b.items.push_back(static_cast<std::size_t>(
        pick.uniform_int(0, static_cast<std::int64_t>(source.size()) - 1)));

  const std::uint64_t sample_seed = splitmix64(seed ^ 0x5a5a5a5aULL);
  std::vector<Image> lr(batch_size);
  std::vector<Image> hr(batch_size);
  detail::parallel_for(batch_size, std::max(1, workers), [&](long s) {
    const degrade::SampleSeed ss{sample_seed,
                                 static_cast<std::uint64_t>(iteration) * batch_size + s};
    TrainingPair p = source.make(b.items[s], ss, augment);
    lr[s] = std::move(p.lr_up);
    hr[s] = std::move(p.hr);
  });
  b.lr_up = to_tensor(lr);
  b.hr = to_tensor(hr);
  return b;
}

BatchLoader::BatchLoader(const PairSource& source, std::uint64_t seed,
                         std::int64_t first_iteration, std::int64_t end_iteration,
                         int batch_size, bool augment, int workers, std::size_t capacity)
    : source_(source),
      seed_(seed),
      next_produce_(first_iteration),
      end_(end_iteration),
      batch_size_(batch_size),
      augment_(augment),
      workers_(workers),
      capacity_(std::max<std::size_t>(1, capacity)) {
  worker_ = std::thread([this] { run(); });
}

BatchLoader::~BatchLoader() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

void BatchLoader::run() {
  try {
    while (true) {
      std::int64_t it;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stop_ || queue_.size() < capacity_; });
        if (stop_ || next_produce_ >= end_) return;
        it = next_produce_++;
      }
      Batch b = make_batch(source_, seed_, it, batch_size_, augment_, workers_);
      {
        std::lock_guard lock(mu_);
        queue_.push_back(std::move(b));
      }
      cv_.notify_all();
    }
  } catch (...) {
    std::lock_guard lock(mu_);
    error_ = std::current_exception();
    cv_.notify_all();
  }
}

Batch BatchLoader::next() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return !queue_.empty() || error_ || next_produce_ >= end_; });
  if (queue_.empty()) {
    if (error_) std::rethrow_exception(error_);
    throw ContractError("BatchLoader exhausted");
  }
  Batch b = std::move(queue_.front());
  queue_.pop_front();
  cv_.notify_all();
  return b;
}

// ---------------------------------------------------------------------------
// Logging

MetricLog::MetricLog(const fs::path& path, bool append) : path_(path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!append) {
    std::ofstream truncate(path, std::ios::trunc);
    if (!truncate) throw IoError("cannot create log '" + path.string() + "'");
  }
}

void MetricLog::write(const nlohmann::json& record) {
  records_.push_back(record);
  if (!path_) return;
  std::ofstream out(*path_, std::ios::app);
  if (!out) throw IoError("cannot append to log '" + path_->string() + "'");
  out << record.dump() << '\n';
}

std::vector<nlohmann::json> read_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open log '" + path.string() + "'");
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("log line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

bool DivergenceDetector::update(real d_loss, real g_loss) {
  const bool rising = !last_g_ || g_loss > *last_g_;
  if (d_loss < threshold_ && rising) {
    ++streak_;
  } else {
    streak_ = d_loss < threshold_ ? 1 : 0;
  }
  last_g_ = g_loss;
  return streak_ >= patience_;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalScore evaluate(const model::Generator& g, const std::vector<TrainingPair>& pairs) {
  SPARNET_REQUIRE(!pairs.empty(), "evaluate needs at least one pair");
  NoGradGuard guard;
  EvalScore score;
  constexpr std::size_t kChunk = 8;
  for (std::size_t start = 0; start < pairs.size(); start += kChunk) {
    const std::size_t end = std::min(pairs.size(), start + kChunk);
    std::vector<Image> lr;
    for (std::size_t i = start; i < end; ++i) lr.push_back(pairs[i].lr_up);
    const auto out = g.forward(Var(to_tensor(lr)), nn::Mode::eval);
    for (std::size_t i = start; i < end; ++i) {
      const Image sr = from_tensor(out.sr.value(), static_cast<int>(i - start));
      score.psnr += metrics::psnr(sr, pairs[i].hr);
      score.ssim += metrics::ssim(sr, pairs[i].hr).mean;
      score.baseline_psnr += metrics::psnr(pairs[i].lr_up, pairs[i].hr);
    }
  }
  const double n = static_cast<double>(pairs.size());
  score.psnr /= n;
  score.ssim /= n;
  score.baseline_psnr /= n;
  return score;
}

std::vector<TrainingPair> eval_pairs(const PairSource& source, std::uint64_t seed, int count) {
  std::vector<TrainingPair> out;
  const std::size_t n = std::min<std::size_t>(source.size(), static_cast<std::size_t>(count));
  const std::uint64_t eval_seed = splitmix64(seed ^ 0xe7a1ULL);
  for (std::size_t i = 0; i < n; ++i) out.push_back(source.make(i, {eval_seed, i}, false));
  return out;
}

namespace {

nlohmann::json eval_record(std::int64_t iteration, const EvalScore& s) {
  return {{"iter", iteration},
          {"eval_psnr", metrics::psnr_to_json(s.psnr)},
          {"eval_ssim", s.ssim},
          {"baseline_psnr", metrics::psnr_to_json(s.baseline_psnr)}};
}

void check_fingerprint(const CheckpointContainer& ckpt, const model::ModelConfig& cfg,
                       const fs::path& path) {
  const std::string expected = config_fingerprint(to_json(cfg));
  if (ckpt.fingerprint() != expected)
    throw CheckpointError("checkpoint '" + path.string() + "' fingerprint " + ckpt.fingerprint() +
                          " does not match model config fingerprint " + expected);
}

}  // namespace

// ---------------------------------------------------------------------------
// SPARNet

SparnetTrainer::SparnetTrainer(ExperimentConfig cfg, const PairSource& source,
                               std::vector<TrainingPair> eval_set)
    : cfg_(std::move(cfg)),
      source_(source),
      eval_set_(std::move(eval_set)),
      generator_(cfg_.model),
      optimizer_(generator_.parameters(), cfg_.train.g_optim) {
  cfg_.validate();
}

real SparnetTrainer::step(const Batch& batch) {
  optimizer_.zero_grad();
  const auto out = generator_.forward(Var(batch.lr_up), nn::Mode::train);
  Var loss = losses::pixel_l2(out.sr, Var(batch.hr));
  const real value = loss.item();
  require_finite(value, "loss", batch.iteration, source_, batch);
  loss.backward();
  optimizer_.step();
  return value;
}

void SparnetTrainer::run(std::int64_t until_iteration, MetricLog& log) {
  const auto& t = cfg_.train;
  const std::int64_t end = std::min<std::int64_t>(until_iteration, t.max_iters);
  if (iteration_ >= end) return;
  BatchLoader loader(source_, t.seed, iteration_, end, t.batch_size, cfg_.data.augment, t.workers);
  while (iteration_ < end) {
    const Batch batch = loader.next();
    const real loss = step(batch);
    ++iteration_;
    if (t.log_every > 0 && iteration_ % t.log_every == 0)
      log.write({{"iter", iteration_}, {"loss", loss}});
    if (t.eval_every > 0 && iteration_ % t.eval_every == 0 && !eval_set_.empty())
      log.write(eval_record(iteration_, evaluate(generator_, eval_set_)));
    if (t.checkpoint_every > 0 && iteration_ % t.checkpoint_every == 0)
      save(fs::path(t.out_dir) / checkpoint_name(iteration_));
  }
}

void SparnetTrainer::save(const fs::path& path) const {
  CheckpointContainer ckpt;
  ckpt.set_config(to_json(cfg_.model));
  ckpt.metadata()["kind"] = "sparnet_trainer";
  ckpt.metadata()["experiment"] = to_json(cfg_);
  ckpt.metadata()["iteration"] = iteration_;
  ckpt.store(generator_.parameters(), "g.");
  optimizer_.save_state(ckpt, "g_opt.");
  ckpt.save(path);
}

void SparnetTrainer::load(const fs::path& path) {
  const auto ckpt = CheckpointContainer::load(path);
  check_fingerprint(ckpt, cfg_.model, path);
  ckpt.restore(generator_.parameters(), "g.");
  optimizer_.load_state(ckpt, "g_opt.");
  iteration_ = ckpt.metadata().value("iteration", std::int64_t{0});
}

// ---------------------------------------------------------------------------
// SPARNetHD

namespace {

losses::PerceptualExtractor make_extractor(const ExtractorSpec& spec) {
  if (spec.weights.empty()) return losses::PerceptualExtractor::random(spec.config, spec.seed);
  return losses::PerceptualExtractor::load(spec.weights);
}

// Marks parameters frozen for the scope and restores them afterwards.
class FreezeScope {
 public:
  explicit FreezeScope(nn::ParameterList params) : params_(std::move(params)) {
    nn::set_trainable(params_, false);
  }
  ~FreezeScope() { nn::set_trainable(params_, true); }
  FreezeScope(const FreezeScope&) = delete;
  FreezeScope& operator=(const FreezeScope&) = delete;

 private:
  nn::ParameterList params_;
};

}  // namespace

HdTrainer::HdTrainer(ExperimentConfig cfg, const PairSource& source,
                     std::vector<TrainingPair> eval_set)
    : cfg_(std::move(cfg)),
      source_(source),
      eval_set_(std::move(eval_set)),
      generator_(cfg_.model),
      discriminator_(cfg_.discriminator),
      extractor_(make_extractor(cfg_.extractor)),
      g_optimizer_(generator_.parameters(), cfg_.train.g_optim),
      d_optimizer_(discriminator_.parameters(), cfg_.train.d_optim) {
  cfg_.validate();
}

HdStepLosses HdTrainer::generator_step(const Batch& batch) {
  const auto& w = cfg_.weights;
  FreezeScope freeze(discriminator_.parameters());
  g_optimizer_.zero_grad();

  const auto out = generator_.forward(Var(batch.lr_up), nn::Mode::train);
  const Var hr(batch.hr);
  losses::GeneratorTerms terms;
  HdStepLosses result;
  if (w.pix > 0) {
    terms.pix = losses::pixel_l1(out.sr, hr);
    result.pix = terms.pix.item();
  }
  if (w.adv > 0 || w.fm > 0) {
    const auto fake = discriminator_.forward(out.sr);
    if (w.adv > 0) {
      std::vector<Var> scores;
      for (const auto& o : fake) scores.push_back(o.score);
      terms.adv = losses::hinge_g_loss(scores);
      result.adv = terms.adv.item();
    }
    if (w.fm > 0) {
      losses::FeatureStack fs_sr;
      losses::FeatureStack fs_hr;
      for (const auto& o : fake) fs_sr.push_back(o.features);
      {
        NoGradGuard guard;
        for (const auto& o : discriminator_.forward(hr)) fs_hr.push_back(o.features);
      }
      terms.fm = losses::feature_matching(fs_sr, fs_hr);
      result.fm = terms.fm.item();
    }
  }
  if (w.pcp > 0) {
    terms.pcp = losses::perceptual(out.sr, hr, extractor_);
    result.pcp = terms.pcp.item();
  }
  Var total = losses::total_g_loss(terms, w);
  result.g_total = total.item();
  require_finite(result.g_total, "generator loss", batch.iteration, source_, batch);
  if (total.requires_grad()) {
    total.backward();
    g_optimizer_.step();
  }
  last_sr_ = out.sr.value();
  return result;
}

real HdTrainer::discriminator_step(const Batch& batch, const Tensor& sr) {
  d_optimizer_.zero_grad();
  std::vector<Var> real_scores;
  std::vector<Var> fake_scores;
  for (const auto& o : discriminator_.forward(Var(batch.hr))) real_scores.push_back(o.score);
  for (const auto& o : discriminator_.forward(Var(sr))) fake_scores.push_back(o.score);
  Var loss = losses::hinge_d_loss(real_scores, fake_scores);
  const real value = loss.item();
  require_finite(value, "discriminator loss", batch.iteration, source_, batch);
  loss.backward();
  d_optimizer_.step();
  return value;
}

HdStepLosses HdTrainer::step(const Batch& batch) {
  HdStepLosses l = generator_step(batch);
  l.d = discriminator_step(batch, last_sr_);
  if (divergence_.update(l.d, l.g_total)) {
    throw TrainingError("training diverged at iteration " + std::to_string(batch.iteration) +
                        ": discriminator loss below 1e-3 for " +
                        std::to_string(divergence_.streak()) +
                        " iterations while the generator loss kept rising");
  }
  return l;
}

void HdTrainer::run(std::int64_t until_iteration, MetricLog& log) {
  const auto& t = cfg_.train;
  const std::int64_t end = std::min<std::int64_t>(until_iteration, t.max_iters);
  if (iteration_ >= end) return;
  BatchLoader loader(source_, t.seed, iteration_, end, t.batch_size, cfg_.data.augment, t.workers);
  while (iteration_ < end) {
    const Batch batch = loader.next();
    const HdStepLosses l = step(batch);
    ++iteration_;
    if (t.log_every > 0 && iteration_ % t.log_every == 0) {
      log.write({{"iter", iteration_},
                 {"loss", l.g_total},
                 {"pix", l.pix},
                 {"adv", l.adv},
                 {"fm", l.fm},
                 {"pcp", l.pcp},
                 {"d_loss", l.d}});
    }
    if (t.eval_every > 0 && iteration_ % t.eval_every == 0 && !eval_set_.empty())
      log.write(eval_record(iteration_, evaluate(generator_, eval_set_)));
    if (t.checkpoint_every > 0 && iteration_ % t.checkpoint_every == 0)
      save(fs::path(t.out_dir) / checkpoint_name(iteration_));
  }
}

void HdTrainer::save(const fs::path& path) const {
  CheckpointContainer ckpt;
  ckpt.set_config(to_json(cfg_.model));
  ckpt.metadata()["kind"] = "sparnethd_trainer";
  ckpt.metadata()["experiment"] = to_json(cfg_);
  ckpt.metadata()["iteration"] = iteration_;
  ckpt.store(generator_.parameters(), "g.");
  ckpt.store(discriminator_.parameters(), "D.");
  g_optimizer_.save_state(ckpt, "g_opt.");
  d_optimizer_.save_state(ckpt, "d_opt.");
  ckpt.save(path);
}

void HdTrainer::load(const fs::path& path) {
  const auto ckpt = CheckpointContainer::load(path);
  check_fingerprint(ckpt, cfg_.model, path);
  ckpt.restore(generator_.parameters(), "g.");
  ckpt.restore(discriminator_.parameters(), "D.");
  g_optimizer_.load_state(ckpt, "g_opt.");
  d_optimizer_.load_state(ckpt, "d_opt.");
  iteration_ = ckpt.metadata().value("iteration", std::int64_t{0});
}

// ---------------------------------------------------------------------------
// Entry points

namespace {

std::vector<TrainingPair> make_eval_set(const ExperimentConfig& cfg, const PairSource& train) {
  if (cfg.data.eval_count == 0) return {};
  if (cfg.data.eval_dir.empty()) return eval_pairs(train, cfg.train.seed, cfg.data.eval_count);
  DataConfig d = cfg.data;
  d.hr_dir = d.eval_dir;
  if (d.source == "manifest") d.source = "bicubic";
  const auto source = make_pair_source(d, cfg.model.hr_side);
  return eval_pairs(*source, cfg.train.seed, cfg.data.eval_count);
}

template <typename Trainer>
TrainResult run_training(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto source = make_pair_source(cfg.data, cfg.model.hr_side);
  Trainer trainer(cfg, *source, make_eval_set(cfg, *source));
  const fs::path out(cfg.train.out_dir);
  fs::create_directories(out);
  TrainResult result;
  result.log = out / "metrics.jsonl";
  MetricLog log(result.log);
  trainer.run(cfg.train.max_iters, log);
  result.checkpoint = out / "checkpoint.ckpt";
  trainer.save(result.checkpoint);
  result.iterations = trainer.iteration();
  return result;
}

}  // namespace

TrainResult train_sparnet(const ExperimentConfig& cfg) {
  return run_training<SparnetTrainer>(cfg);
}

TrainResult train_sparnethd(const ExperimentConfig& cfg) { return run_training<HdTrainer>(cfg); }

TrainResult train(const ExperimentConfig& cfg) {
  return cfg.model.variant == model::Variant::sparnethd ? train_sparnethd(cfg) : train_sparnet(cfg);
}

model::Generator load_generator(const fs::path& checkpoint) {
  const auto ckpt = CheckpointContainer::load(checkpoint);
  if (!ckpt.metadata().contains("config"))
    throw CheckpointError("checkpoint '" + checkpoint.string() + "' has no model config");
  const auto cfg = model_config_from_json(ckpt.metadata().at("config"));
  check_fingerprint(ckpt, cfg, checkpoint);
  model::Generator g(cfg);
  ckpt.restore(g.parameters(), "g.");
  return g;
}

void save_generator(const model::Generator& g, const fs::path& path) {
  CheckpointContainer ckpt;
  ckpt.set_config(to_json(g.config()));
  ckpt.metadata()["kind"] = "generator";
  ckpt.store(g.parameters(), "g.");
  ckpt.save(path);
}

InferResult infer(const model::Generator& g, const Image& lr) {
  SPARNET_REQUIRE(lr.channels() == 3, "infer expects an RGB image");
  const int side = g.config().hr_side;
  const Image lr_up = imaging::resize(lr, side, side, Interp::bicubic);
  NoGradGuard guard;
  const auto out = g.forward(Var(to_tensor(lr_up)), nn::Mode::eval);
  InferResult r;
  r.sr = from_tensor(out.sr.value());
  for (const auto& a : out.attention) r.attention.push_back(from_tensor(a.value()));
  return r;
}

}  // namespace sparnet::trainkit
