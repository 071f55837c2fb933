#pragma once
// Episodic training loop: sampling, forward/backward over the enabled
// streams, Adam with a step-halving learning rate, validation, checkpoints
// and the per-iteration metrics CSV.

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>

#include "fewshot/adam.hpp"
#include "fewshot/checkpoint.hpp"
#include "fewshot/config.hpp"
#include "fewshot/episodes.hpp"
#include "fewshot/evaluate.hpp"
#include "fewshot/model.hpp"

namespace fewshot {

struct TrainConfig {
  ModelSpec model;
  EpisodeSpec episode;
  std::size_t eval_queries = 15;
  std::size_t batch = 1;  // episodes per iteration
  JitterOptions jitter;
  std::size_t iterations = 0;
  double lr = 1e-3;
  std::size_t lr_decay_interval = 2000;
  std::size_t eval_interval = 500;
  std::size_t eval_episodes = 100;
  std::uint64_t seed = 1;

  // Throws ConfigError on invalid values.
  static TrainConfig from(const Config& config);
};

ModelSpec model_spec(const Config& config);
// Dataset named by the dataset.* keys, rotated when augment.rotations is on.
ClassDataset load_configured_dataset(const Config& config);
// Fresh model, initialised from the configured seed.
std::unique_ptr<FewShotModel> build_model(const Config& config);
// Model rebuilt from the configuration stored in a checkpoint, with its
// parameters and batch-norm statistics restored. `config` receives that
// configuration when non-null.
std::unique_ptr<FewShotModel> model_from_checkpoint(const Checkpoint& ckpt, Config* config = nullptr);

// lr0 / 2^floor(iteration / interval), iteration counted from 0.
double learning_rate(double lr0, std::size_t interval, std::uint64_t iteration);

struct IterationMetrics {
  std::uint64_t iter = 0;  // 0-based index of the step
  double lr = 0;
  double total = 0;
  PerStream<std::optional<double>> losses;
  PerStream<std::optional<double>> log_vars;
  std::optional<double> val_accuracy;
};

std::string metrics_header();
std::string metrics_row(const IterationMetrics& m);

struct TrainSummary {
  std::uint64_t iterations = 0;
  std::optional<double> best_val_accuracy;
  std::filesystem::path last_checkpoint;
  std::filesystem::path best_checkpoint;
  std::filesystem::path metrics;
};

class Trainer {
 public:
  Trainer(const Config& config, const ClassDataset& dataset);

  // One optimizer step over `batch` freshly sampled training episodes.
  IterationMetrics step();
  // Trains until the configured iteration count, writing metrics.csv,
  // last.ckpt and best.ckpt (best validation accuracy) into `out_dir`.
  TrainSummary run(const std::filesystem::path& out_dir, std::ostream* log = nullptr);

  Checkpoint checkpoint() const;
  // Restores parameters, optimizer state, iteration and random state.
  // Throws ConfigError when the fingerprints differ.
  void restore(const Checkpoint& ckpt);

  FewShotModel& model() { return *model_; }
  const TrainConfig& train_config() const { return tc_; }
  std::uint64_t iteration() const { return iteration_; }
  std::optional<double> validate();

 private:
  void write_diagnostics(const std::string& reason) const;

  Config config_;
  TrainConfig tc_;
  const ClassDataset& ds_;
  std::unique_ptr<FewShotModel> model_;
  std::vector<NamedTensor> params_;
  std::vector<NamedTensor> buffers_;
  Adam adam_;
  Rng rng_;
  std::uint64_t iteration_ = 0;
  double best_val_ = -1;
  // last inputs, for the numerical-abort dump
  std::vector<Episode> last_episodes_;
  PerStream<std::optional<double>> last_losses_;
  std::filesystem::path diagnostics_dir_;
};

}  // namespace fewshot
