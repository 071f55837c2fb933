#pragma once
// Experiment drivers on top of the trainer: stream/weight ablation tables,
// embedding feature-map dumps and the local-global MI consistency probe.

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fewshot/evaluate.hpp"
#include "fewshot/image.hpp"
#include "fewshot/trainer.hpp"

namespace fewshot {

// Evaluation settings named by the eval.* and episode.* keys.
EvalOptions eval_options(const Config& config);

// ---- ablation ----------------------------------------------------------------

struct AblationCell {
  std::string label;
  WeightMode mode = WeightMode::kFixed;
  PerStream<Real> weights{};  // fixed mode; a zero weight disables the stream
};

// ';'-separated cells, each "w_a,w_corrC,w_corrD,w_MI" or "learned".
std::vector<AblationCell> parse_ablation_grid(std::string_view text);
// The base configuration with the cell's streams, weights and seed applied.
Config ablation_config(const Config& base, const AblationCell& cell, std::uint64_t seed);

struct AblationResult {
  AblationCell cell;
  std::uint64_t seed = 0;
  EvalReport report;
  std::filesystem::path run_dir;
};

// One train + evaluate run per cell and seed (seed, seed+1, ...). Runs go to
// out_dir/cellN/seedS; ablation.csv and ablation.md are written to out_dir.
std::vector<AblationResult> run_ablation(const Config& base, const ClassDataset& ds,
                                         const std::vector<AblationCell>& cells, std::size_t seeds,
                                         const std::filesystem::path& out_dir, std::ostream* log = nullptr);
std::string ablation_csv(const std::vector<AblationResult>& results);
// One row per cell, accuracy averaged over seeds.
std::string ablation_markdown(const std::vector<AblationResult>& results);

// ---- feature maps ------------------------------------------------------------

struct FeatureDump {
  std::size_t images = 0, channels = 0, height = 0, width = 0;
  std::vector<Real> values;  // [image][channel][y][x]

  Real at(std::size_t i, std::size_t c, std::size_t y, std::size_t x) const {
    return values[((i * channels + c) * height + y) * width + x];
  }
};

// First `channels` embedding channels of every image (evaluation mode).
FeatureDump extract_features(FewShotModel& model, const Tensor& images, std::size_t channels);
// One row of tiles per image, one tile per channel, each tile min-max scaled
// on its own (a constant tile is mid-gray) and enlarged `scale` times.
Image feature_grid(const FeatureDump& dump, std::size_t scale = 4);
// PNG grid plus CSV rows image,channel,y,x,value.
void write_feature_dump(const FeatureDump& dump, const std::filesystem::path& png,
                        const std::filesystem::path& csv);

// ---- MI consistency probe ----------------------------------------------------

struct ProbePairs {
  std::vector<ImageRef> support;
  std::vector<ImageRef> query;
  std::vector<Real> same;  // 1 for same class, 0 otherwise
};

// Alternating same-class / different-class pairs from one split.
ProbePairs sample_probe_pairs(const ClassDataset& ds, Split split, std::size_t count, Rng& rng);
// mean (score - target)^2
double probe_mse(std::span<const Real> scores, std::span<const Real> targets);

struct MiProbeOptions {
  Split split = Split::kTest;
  std::size_t pairs = 2000;
  std::uint64_t seed = 1;
  // Adam steps fitting the MI head on training-split pairs with the embedding
  // frozen; 0 probes the head as stored.
  std::size_t fit_iterations = 0;
  double fit_lr = 1e-3;
  std::size_t fit_batch = 32;
};

struct MiProbeReport {
  double mse = 0;
  std::size_t pairs = 0;
  std::size_t fit_iterations = 0;
  bool head_trained_with_model = false;  // the MI stream was enabled in training
};

// MI-head scores of support/query image pairs: the support's max-pooled
// embedding against every location of the query's embedding.
Tensor mi_pair_scores(FewShotModel& model, const Tensor& support_images, const Tensor& query_images,
                      bool train_head);
// Modifies the model's MI head when fit_iterations > 0.
MiProbeReport mi_probe(FewShotModel& model, const ClassDataset& ds, const MiProbeOptions& options,
                       std::ostream* log = nullptr);

}  // namespace fewshot
