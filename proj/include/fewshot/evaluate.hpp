#pragma once
// Episode-averaged accuracy with a 95% confidence half-width.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fewshot/episodes.hpp"
#include "fewshot/model.hpp"

namespace fewshot {

struct EvalOptions {
  Split split = Split::kTest;
  EpisodeSpec spec{5, 1, 15};
  std::size_t episodes = 600;
  std::uint64_t seed = 1;
  std::size_t workers = 1;  // 0: hardware concurrency
};

struct EvalReport {
  double accuracy = 0;  // fraction of queries whose fused argmax is the true class
  double ci95 = 0;      // 1.96 * sample std of episode accuracies / sqrt(episodes)
  std::size_t episodes = 0;
  PerStream<std::optional<double>> stream_accuracy;  // argmax of each stream alone
  std::uint64_t fingerprint = 0;
  std::vector<double> episode_accuracy;

  std::string summary() const;  // "97.13% +- 0.45% over 1000 episodes"
};

// Scores one episode: per-stream [n, ways] matrices, undefined for streams
// that do not take part.
using EpisodeScorer = std::function<PerStream<Tensor>(const Episode&)>;

// Episode i is drawn from Rng(seed).fork(i), so the report does not depend on
// the number of workers. The scorer runs concurrently when workers > 1.
EvalReport evaluate_scorer(const ClassDataset& ds, const EvalOptions& options, const EpisodeScorer& scorer,
                           const PerStream<Real>& fusion_weights);

// Evaluation-mode forward passes (running batch-norm statistics, no graph).
EvalReport evaluate(FewShotModel& model, const ClassDataset& ds, const EvalOptions& options);

// Half-width 1.96 * s / sqrt(n) of a sample of per-episode accuracies.
double confidence_half_width(const std::vector<double>& samples);

}  // namespace fewshot
