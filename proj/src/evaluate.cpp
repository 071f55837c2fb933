#include "fewshot/evaluate.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <thread>

#include "fewshot/error.hpp"

namespace fewshot {

double confidence_half_width(const std::vector<double>& samples) {
  const std::size_t n = samples.size();
  if (n < 2) return 0;
  double mean = 0;
  for (double v : samples) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0;
  for (double v : samples) ss += (v - mean) * (v - mean);
  return 1.96 * std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
}

std::string EvalReport::summary() const {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.2f%% +- %.2f%% over %zu episodes", 100 * accuracy, 100 * ci95, episodes);
  return buf;
}

namespace {

struct EpisodeOutcome {
  double accuracy = 0;
  PerStream<double> stream_correct{};
  PerStream<bool> stream_present{};
  std::size_t queries = 0;
};

EpisodeOutcome score_one(const ClassDataset& ds, const EvalOptions& o, const EpisodeScorer& scorer,
                         const PerStream<Real>& weights, std::size_t index) {
  Rng rng = Rng(o.seed).fork(index);
  const Episode ep = sample_episode(ds, o.split, o.spec, rng);
  const PerStream<Tensor> scores = scorer(ep);
  const FusedScores fused = fuse_scores(scores, weights);
  const auto labels = ep.query_labels();
  EpisodeOutcome out;
  out.queries = labels.size();
  std::size_t correct = 0;
  for (std::size_t j = 0; j < labels.size(); ++j) correct += ep.classes[fused.predictions[j]] == labels[j] ? 1 : 0;
  out.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  for (std::size_t k = 0; k < kStreamCount; ++k) {
    if (!scores[k].defined()) continue;
    out.stream_present[k] = true;
    const auto pred = argmax_rows(scores[k]);
    std::size_t c = 0;
    for (std::size_t j = 0; j < labels.size(); ++j) c += ep.classes[pred[j]] == labels[j] ? 1 : 0;
    out.stream_correct[k] = static_cast<double>(c) / static_cast<double>(labels.size());
  }
  return out;
}

}  // namespace

EvalReport evaluate_scorer(const ClassDataset& ds, const EvalOptions& o, const EpisodeScorer& scorer,
                           const PerStream<Real>& weights) {
  if (o.episodes == 0) throw ContractError("evaluation needs at least one episode");
  std::size_t workers = o.workers == 0 ? std::max(1u, std::thread::hardware_concurrency()) : o.workers;
  workers = std::min(workers, o.episodes);
  std::vector<EpisodeOutcome> outcomes(o.episodes);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    NoGradGuard guard;
    for (std::size_t i = next++; i < o.episodes; i = next++) {
      try {
        outcomes[i] = score_one(ds, o, scorer, weights, i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = o.episodes;
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  EvalReport report;
  report.episodes = o.episodes;
  PerStream<double> stream_sum{};
  double total = 0;
  // merged in episode order, so the sums do not depend on scheduling
  for (const EpisodeOutcome& e : outcomes) {
    report.episode_accuracy.push_back(e.accuracy);
    total += e.accuracy;
    for (std::size_t k = 0; k < kStreamCount; ++k) stream_sum[k] += e.stream_correct[k];
  }
  report.accuracy = total / static_cast<double>(o.episodes);
  report.ci95 = confidence_half_width(report.episode_accuracy);
  for (std::size_t k = 0; k < kStreamCount; ++k) {
    if (outcomes.front().stream_present[k]) report.stream_accuracy[k] = stream_sum[k] / static_cast<double>(o.episodes);
  }
  return report;
}

EvalReport evaluate(FewShotModel& model, const ClassDataset& ds, const EvalOptions& options) {
  const EpisodeScorer scorer = [&](const Episode& ep) {
    const Tensor support = images_to_tensor(ds, ep.support);
    const Tensor query = images_to_tensor(ds, ep.query);
    return model.score(support, query, ep.spec.ways, ep.spec.shots, false);
  };
  return evaluate_scorer(ds, options, scorer, model.fusion_weights());
}

}  // namespace fewshot
