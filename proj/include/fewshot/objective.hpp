#pragma once

#include <span>
#include <vector>

#include "fewshot/streams.hpp"

namespace fewshot {

enum class LossKind { kMSE, kCEL };

// y[j,c] = 1 iff query j belongs to episode class c.
struct MatchTargets {
  Tensor y;  // [n_query, ways], no gradient
  std::size_t queries() const { return y.dim(0); }
  std::size_t ways() const { return y.dim(1); }
};

// `class_labels` lists the episode classes in column order; every query label
// must be one of them (ContractError otherwise).
MatchTargets match_targets(std::span<const std::size_t> class_labels,
                           std::span<const std::size_t> query_labels);

// MSE: 1/2 sum (y - p)^2. CEL: -sum y log softmax_row(p), the log floored at
// 1e-12. Both are summed over queries and classes.
Tensor stream_loss(const Tensor& scores, const MatchTargets& targets, LossKind kind);

enum class WeightMode { kFixed, kLearned };

// Per-stream loss weights: fixed w_k >= 0, or learned log variances s_k with
// effective weight exp(-s_k).
class StreamWeights {
 public:
  static StreamWeights fixed(const PerStream<Real>& weights);
  static StreamWeights learned(const PerStream<Real>& initial_log_vars = {});

  WeightMode mode() const { return mode_; }
  const PerStream<Real>& fixed_weights() const { return fixed_; }
  // [4] trainable tensor in learned mode, undefined in fixed mode.
  const Tensor& log_vars() const { return log_vars_; }
  // w_k or exp(-s_k).
  PerStream<Real> effective() const;
  // Throws ConfigError unless at least one enabled stream has positive weight.
  void validate(const StreamSet& enabled) const;

 private:
  WeightMode mode_ = WeightMode::kFixed;
  PerStream<Real> fixed_{};
  Tensor log_vars_;
};

// sum_k w_k L_k over the defined losses.
Tensor fuse_fixed(const PerStream<Tensor>& losses, const PerStream<Real>& weights);
// sum_k exp(-s_k) L_k + 1/2 sum_k s_k over the defined losses.
Tensor fuse_uncertainty(const PerStream<Tensor>& losses, const Tensor& log_vars);
Tensor fuse_losses(const PerStream<Tensor>& losses, const StreamWeights& weights);

struct FusedScores {
  std::size_t queries = 0;
  std::size_t ways = 0;
  std::vector<Real> scores;              // [queries * ways], row-major
  std::vector<std::size_t> predictions;  // argmax per query, first max wins
};

// Convex combination sum_k w_k p_k / sum_k w_k over the defined score
// matrices.
FusedScores fuse_scores(const PerStream<Tensor>& scores, const PerStream<Real>& weights);

// Row-wise argmax of an [n, ways] score matrix.
std::vector<std::size_t> argmax_rows(const Tensor& scores);

}  // namespace fewshot
