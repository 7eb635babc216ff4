#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sparnet/config.hpp"
#include "sparnet/degrade.hpp"
#include "sparnet/losses.hpp"
#include "sparnet/model.hpp"
#include "sparnet/optim.hpp"

namespace sparnet::trainkit {

struct TrainingPair {
  Image lr_up;
  Image hr;
};

// Produces the (lr_up, hr) pair for one sample. Implementations are pure
// functions of (item, seed) so batches can be built by any worker.
class PairSource {
 public:
  virtual ~PairSource() = default;
  virtual std::size_t size() const = 0;
  virtual TrainingPair make(std::size_t item, degrade::SampleSeed seed,
                            bool augment) const = 0;
  virtual std::string describe(std::size_t item) const = 0;
};

// HR images; LR = bicubic downscale to lr_side, then bicubic back up.
class BicubicPairSource : public PairSource {
 public:
  BicubicPairSource(std::vector<Image> hr, std::vector<std::string> names, int lr_side);
  std::size_t size() const override { return hr_.size(); }
  TrainingPair make(std::size_t item, degrade::SampleSeed seed,
                    bool augment) const override;
  std::string describe(std::size_t item) const override { return names_[item]; }

 private:
  std::vector<Image> hr_;
  std::vector<std::string> names_;
  int lr_side_;
};

// HR images; LR synthesized online with freshly sampled degradation params.
class DegradePairSource : public PairSource {
 public:
  DegradePairSource(std::vector<Image> hr, std::vector<std::string> names);
  std::size_t size() const override { return hr_.size(); }
  TrainingPair make(std::size_t item, degrade::SampleSeed seed,
                    bool augment) const override;
  std::string describe(std::size_t item) const override { return names_[item]; }

 private:
  std::vector<Image> hr_;
  std::vector<std::string> names_;
};

// Pairs written by degrade::synthesize, read from disk on demand.
class ManifestPairSource : public PairSource {
 public:
  explicit ManifestPairSource(const std::filesystem::path& manifest);
  std::size_t size() const override { return records_.size(); }
  TrainingPair make(std::size_t item, degrade::SampleSeed seed,
                    bool augment) const override;
  std::string describe(std::size_t item) const override;

 private:
  std::filesystem::path root_;
  std::vector<degrade::ManifestRecord> records_;
};

std::unique_ptr<PairSource> make_pair_source(const DataConfig& data, int hr_side);
// Loads images of a directory, prepared to square hr_side.
std::vector<Image> load_hr_images(const std::filesystem::path& dir, int hr_side,
                                  std::vector<std::string>* names = nullptr);

struct Batch {
  std::int64_t iteration = 0;
  std::vector<std::size_t> items;
  Tensor lr_up;
  Tensor hr;
};

// Deterministic batch for an iteration: item choice and augmentation depend
// only on (seed, iteration, slot).
Batch make_batch(const PairSource& source, std::uint64_t seed, std::int64_t iteration,
                 int batch_size, bool augment, int workers);

// Background producer filling a bounded queue with consecutive batches.
class BatchLoader {
 public:
  BatchLoader(const PairSource& source, std::uint64_t seed, std::int64_t first_iteration,
              std::int64_t end_iteration, int batch_size, bool augment, int workers,
              std::size_t capacity = 2);
  ~BatchLoader();
  BatchLoader(const BatchLoader&) = delete;
  BatchLoader& operator=(const BatchLoader&) = delete;

  Batch next();

 private:
  void run();

  const PairSource& source_;
  std::uint64_t seed_;
  std::int64_t next_produce_;
  std::int64_t end_;
  int batch_size_;
  bool augment_;
  int workers_;
  std::size_t capacity_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Batch> queue_;
  std::exception_ptr error_;
  bool stop_ = false;
  std::thread worker_;
};

// Line-delimited JSON log; also kept in memory.
class MetricLog {
 public:
  MetricLog() = default;
  explicit MetricLog(const std::filesystem::path& path, bool append = false);
  void write(const nlohmann::json& record);
  const std::vector<nlohmann::json>& records() const { return records_; }

 private:
  std::optional<std::filesystem::path> path_;
  std::vector<nlohmann::json> records_;
};

std::vector<nlohmann::json> read_log(const std::filesystem::path& path);

// Aborts HD training when D has collapsed (loss < threshold for `patience`
// consecutive iterations) while the G loss rises every iteration.
class DivergenceDetector {
 public:
  explicit DivergenceDetector(int patience = 500, real threshold = 1e-3)
      : patience_(patience), threshold_(threshold) {}
  // Returns true once divergence is confirmed.
  bool update(real d_loss, real g_loss);
  int streak() const { return streak_; }

 private:
  int patience_;
  real threshold_;
  int streak_ = 0;
  std::optional<real> last_g_;
};

// Mean luminance PSNR/SSIM of the generator (eval mode) over pairs.
struct EvalScore {
  double psnr = 0;
  double ssim = 0;
  double baseline_psnr = 0;  // lr_up against hr
};
EvalScore evaluate(const model::Generator& g, const std::vector<TrainingPair>& pairs);
std::vector<TrainingPair> eval_pairs(const PairSource& source, std::uint64_t seed,
                                     int count);

// SPARNet: pixel L2, single Adam.
class SparnetTrainer {
 public:
  SparnetTrainer(ExperimentConfig cfg, const PairSource& source,
                 std::vector<TrainingPair> eval_set = {});

  // Runs until `until_iteration` (exclusive) or train.max_iters.
  void run(std::int64_t until_iteration, MetricLog& log);
  // One optimizer step on a given batch; returns the loss.
  real step(const Batch& batch);

  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

  std::int64_t iteration() const { return iteration_; }
  model::Generator& generator() { return generator_; }
  optim::Adam& optimizer() { return optimizer_; }

 private:
  ExperimentConfig cfg_;
  const PairSource& source_;
  std::vector<TrainingPair> eval_set_;
  model::Generator generator_;
  optim::Adam optimizer_;
  std::int64_t iteration_ = 0;
};

struct HdStepLosses {
  real g_total = 0;
  real pix = 0;
  real adv = 0;
  real fm = 0;
  real pcp = 0;
  real d = 0;
};

// SPARNetHD: G on the weighted four-term loss, then D on the hinge loss,
// once each per iteration.
class HdTrainer {
 public:
  HdTrainer(ExperimentConfig cfg, const PairSource& source,
            std::vector<TrainingPair> eval_set = {});

  void run(std::int64_t until_iteration, MetricLog& log);
  HdStepLosses step(const Batch& batch);
  // Generator half of step(): returns the loss terms, leaves D untouched.
  HdStepLosses generator_step(const Batch& batch);
  real discriminator_step(const Batch& batch, const Tensor& sr);

  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

  std::int64_t iteration() const { return iteration_; }
  model::Generator& generator() { return generator_; }
  model::MultiScaleDiscriminator& discriminator() { return discriminator_; }
  losses::PerceptualExtractor& extractor() { return extractor_; }

 private:
  ExperimentConfig cfg_;
  const PairSource& source_;
  std::vector<TrainingPair> eval_set_;
  model::Generator generator_;
  model::MultiScaleDiscriminator discriminator_;
  losses::PerceptualExtractor extractor_;
  optim::Adam g_optimizer_;
  optim::Adam d_optimizer_;
  DivergenceDetector divergence_;
  std::int64_t iteration_ = 0;
  Tensor last_sr_;
};

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  std::int64_t iterations = 0;
};

// Full runs writing checkpoints and metrics.jsonl under train.out_dir.
TrainResult train_sparnet(const ExperimentConfig& cfg);
TrainResult train_sparnethd(const ExperimentConfig& cfg);
TrainResult train(const ExperimentConfig& cfg);

// Generator restored from a trainer or generator checkpoint.
model::Generator load_generator(const std::filesystem::path& checkpoint);
void save_generator(const model::Generator& g, const std::filesystem::path& path);

struct InferResult {
  Image sr;
  std::vector<Image> attention;  // in forward order
};

// Bicubic pre-upsample to the model side, eval-mode forward, clamp.
InferResult infer(const model::Generator& g, const Image& lr);

}  // namespace sparnet::trainkit
