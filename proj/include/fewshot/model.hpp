#pragma once
// The full matching network: shared Conv-64F embedding, the stream heads and
// the per-stream loss weights.

#include <vector>

#include "fewshot/embedding.hpp"
#include "fewshot/objective.hpp"
#include "fewshot/streams.hpp"

namespace fewshot {

struct ModelSpec {
  std::size_t in_channels = 1;
  std::size_t image_size = 24;
  StreamOptions streams;
  ShotAggregation aggregation = ShotAggregation::kSum;
  LossKind loss = LossKind::kMSE;
  WeightMode weight_mode = WeightMode::kLearned;
  PerStream<Real> fixed_weights{1, 1, 1, 1};
  PerStream<Real> init_log_vars{};
};

struct ForwardResult {
  PerStream<Tensor> scores;  // [n, ways] per enabled stream
  PerStream<Tensor> losses;  // scalar per enabled stream
  Tensor total;              // fused objective
};

class FewShotModel {
 public:
  FewShotModel(const ModelSpec& spec, Rng& rng);

  const ModelSpec& spec() const { return spec_; }
  const StreamSet& enabled() const { return spec_.streams.enabled; }

  // Embeds support (class-major, ways*shots images) and query images in one
  // batch, aggregates the shots of each class and scores every query against
  // every class.
  PerStream<Tensor> score(const Tensor& support_images, const Tensor& query_images, std::size_t ways,
                          std::size_t shots, bool training);
  PerStream<Tensor> score(const Tensor& support_images, const Tensor& query_images, std::size_t ways,
                          std::size_t shots, bool training, const StreamSet& subset);
  ForwardResult forward(const Tensor& support_images, const Tensor& query_images, std::size_t ways,
                        std::size_t shots, const MatchTargets& targets, bool training);

  // Fusion weights for inference: w_k or exp(-s_k) on enabled streams, 0 elsewhere.
  PerStream<Real> fusion_weights() const;

  // Named trainable tensors (embedding, heads, and the log variances in
  // learned mode) and non-trainable state (batch-norm running statistics).
  std::vector<NamedTensor> parameters();
  std::vector<NamedTensor> buffers();

  EmbeddingNet& embedding() { return embedding_; }
  StreamHeads& heads() { return heads_; }
  StreamWeights& weights() { return weights_; }

 private:
  ModelSpec spec_;
  EmbeddingNet embedding_;
  StreamHeads heads_;
  StreamWeights weights_;
};

}  // namespace fewshot
