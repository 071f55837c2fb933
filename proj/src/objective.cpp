#include "fewshot/objective.hpp"

#include <algorithm>
#include <cmath>

#include "fewshot/error.hpp"

namespace fewshot {

namespace {
constexpr Real kLogFloor = 1e-12;
}

MatchTargets match_targets(std::span<const std::size_t> class_labels,
                           std::span<const std::size_t> query_labels) {
  if (class_labels.empty() || query_labels.empty()) {
    throw ContractError("match_targets needs classes and queries");
  }
  const std::size_t ways = class_labels.size();
  std::vector<Real> y(query_labels.size() * ways, Real(0));
  for (std::size_t j = 0; j < query_labels.size(); ++j) {
    const auto it = std::find(class_labels.begin(), class_labels.end(), query_labels[j]);
    if (it == class_labels.end()) {
      throw ContractError("query label " + std::to_string(query_labels[j]) + " is not an episode class");
    }
    y[j * ways + static_cast<std::size_t>(it - class_labels.begin())] = Real(1);
  }
  return MatchTargets{Tensor::from({query_labels.size(), ways}, std::move(y))};
}

Tensor stream_loss(const Tensor& scores, const MatchTargets& targets, LossKind kind) {
  if (scores.shape() != targets.y.shape()) {
    throw DimensionError("scores " + shape_str(scores.shape()) + " vs targets " + shape_str(targets.y.shape()));
  }
  if (kind == LossKind::kMSE) return mul_scalar(sum(square(sub(targets.y, scores))), Real(0.5));
  return neg(sum(mul(targets.y, log(softmax(scores, 1), kLogFloor))));
}

StreamWeights StreamWeights::fixed(const PerStream<Real>& weights) {
  StreamWeights w;
  w.mode_ = WeightMode::kFixed;
  w.fixed_ = weights;
  for (Real v : weights) {
    if (!(v >= 0) || !std::isfinite(v)) throw ConfigError("fixed stream weights must be finite and >= 0");
  }
  return w;
}

StreamWeights StreamWeights::learned(const PerStream<Real>& initial_log_vars) {
  StreamWeights w;
  w.mode_ = WeightMode::kLearned;
  w.log_vars_ = Tensor::from({kStreamCount}, std::vector<Real>(initial_log_vars.begin(), initial_log_vars.end()), true);
  return w;
}

PerStream<Real> StreamWeights::effective() const {
  if (mode_ == WeightMode::kFixed) return fixed_;
  PerStream<Real> out{};
  const auto s = log_vars_.data();
  for (std::size_t k = 0; k < kStreamCount; ++k) out[k] = std::exp(-s[k]);
  return out;
}

void StreamWeights::validate(const StreamSet& enabled) const {
  if (enabled.empty()) throw ConfigError("no stream enabled");
  if (mode_ == WeightMode::kLearned) return;
  for (Stream s : kAllStreams) {
    if (enabled.contains(s) && fixed_[index_of(s)] > 0) return;
  }
  throw ConfigError("every enabled stream has weight 0");
}

Tensor fuse_fixed(const PerStream<Tensor>& losses, const PerStream<Real>& weights) {
  Tensor total;
  for (std::size_t k = 0; k < kStreamCount; ++k) {
    if (!losses[k].defined()) continue;
    if (weights[k] < 0) throw ConfigError("negative stream weight");
    const Tensor term = mul_scalar(losses[k], weights[k]);
    total = total.defined() ? add(total, term) : term;
  }
  if (!total.defined()) throw ContractError("fuse_fixed without any stream loss");
  return total;
}

Tensor fuse_uncertainty(const PerStream<Tensor>& losses, const Tensor& log_vars) {
  if (!log_vars.defined() || log_vars.numel() != kStreamCount) {
    throw DimensionError("fuse_uncertainty expects one log variance per stream");
  }
  Tensor total;
  for (std::size_t k = 0; k < kStreamCount; ++k) {
    if (!losses[k].defined()) continue;
    const Tensor s = narrow(log_vars, 0, k, 1);
    const Tensor term = add(mul(exp(neg(s)), losses[k]), mul_scalar(s, Real(0.5)));
    total = total.defined() ? add(total, term) : term;
  }
  if (!total.defined()) throw ContractError("fuse_uncertainty without any stream loss");
  return total;
}

Tensor fuse_losses(const PerStream<Tensor>& losses, const StreamWeights& weights) {
  return weights.mode() == WeightMode::kFixed ? fuse_fixed(losses, weights.fixed_weights())
                                              : fuse_uncertainty(losses, weights.log_vars());
}

FusedScores fuse_scores(const PerStream<Tensor>& scores, const PerStream<Real>& weights) {
  FusedScores out;
  Real total_weight = 0;
  for (std::size_t k = 0; k < kStreamCount; ++k) {
    if (!scores[k].defined()) continue;
    const Tensor& p = scores[k];
    if (p.ndim() != 2) throw DimensionError("score matrix " + shape_str(p.shape()));
    if (out.scores.empty()) {
      out.queries = p.dim(0);
      out.ways = p.dim(1);
      out.scores.assign(p.numel(), Real(0));
    } else if (p.dim(0) != out.queries || p.dim(1) != out.ways) {
      throw DimensionError("score matrices of different shapes");
    }
    const auto v = p.data();
    for (std::size_t i = 0; i < v.size(); ++i) out.scores[i] += weights[k] * v[i];
    total_weight += weights[k];
  }
  if (out.scores.empty()) throw ContractError("fuse_scores without any enabled stream");
  if (!(total_weight > 0)) throw ConfigError("stream weights sum to zero");
  for (Real& s : out.scores) s /= total_weight;
  out.predictions.resize(out.queries);
  for (std::size_t j = 0; j < out.queries; ++j) {
    const auto row = out.scores.begin() + static_cast<std::ptrdiff_t>(j * out.ways);
    out.predictions[j] = static_cast<std::size_t>(std::max_element(row, row + static_cast<std::ptrdiff_t>(out.ways)) - row);
  }
  return out;
}

std::vector<std::size_t> argmax_rows(const Tensor& scores) {
  if (scores.ndim() != 2) throw DimensionError("argmax_rows on " + shape_str(scores.shape()));
  const std::size_t n = scores.dim(0);
  const std::size_t w = scores.dim(1);
  std::vector<std::size_t> out(n);
  const auto v = scores.data();
  for (std::size_t j = 0; j < n; ++j) {
    const auto row = v.begin() + static_cast<std::ptrdiff_t>(j * w);
    out[j] = static_cast<std::size_t>(std::max_element(row, row + static_cast<std::ptrdiff_t>(w)) - row);
  }
  return out;
}

}  // namespace fewshot
