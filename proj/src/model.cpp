#include "fewshot/model.hpp"

#include <array>

#include "fewshot/error.hpp"

namespace fewshot {

namespace {

StreamWeights make_weights(const ModelSpec& spec) {
  StreamWeights w = spec.weight_mode == WeightMode::kFixed ? StreamWeights::fixed(spec.fixed_weights)
                                                           : StreamWeights::learned(spec.init_log_vars);
  w.validate(spec.streams.enabled);
  return w;
}

}  // namespace

FewShotModel::FewShotModel(const ModelSpec& spec, Rng& rng)
    : spec_(spec),
      embedding_(spec.in_channels, rng),
      heads_(EmbeddingNet::kChannels, spec.image_size / 4, spec.image_size / 4, spec.streams, rng),
      weights_(make_weights(spec)) {
  if (spec.image_size % 4 != 0 || spec.image_size == 0) {
    throw ConfigError("image size must be a positive multiple of 4");
  }
}

PerStream<Tensor> FewShotModel::score(const Tensor& support_images, const Tensor& query_images, std::size_t ways,
                                      std::size_t shots, bool training) {
  return score(support_images, query_images, ways, shots, training, spec_.streams.enabled);
}

PerStream<Tensor> FewShotModel::score(const Tensor& support_images, const Tensor& query_images, std::size_t ways,
                                      std::size_t shots, bool training, const StreamSet& subset) {
  if (support_images.dim(0) != ways * shots) {
    throw DimensionError("support holds " + std::to_string(support_images.dim(0)) + " images, expected " +
                         std::to_string(ways * shots));
  }
  const std::size_t m = support_images.dim(0);
  const std::size_t n = query_images.dim(0);
  const std::array<Tensor, 2> batch{support_images, query_images};
  const Tensor features = embedding_.embed(concat(batch, 0), training);
  const Tensor support = aggregate_support(narrow(features, 0, 0, m), ways, shots, spec_.aggregation);
  const Tensor query = narrow(features, 0, m, n);
  return heads_.score_episode(support, query, training, subset);
}

ForwardResult FewShotModel::forward(const Tensor& support_images, const Tensor& query_images, std::size_t ways,
                                    std::size_t shots, const MatchTargets& targets, bool training) {
  ForwardResult r;
  r.scores = score(support_images, query_images, ways, shots, training);
  for (std::size_t k = 0; k < kStreamCount; ++k) {
    if (r.scores[k].defined()) r.losses[k] = stream_loss(r.scores[k], targets, spec_.loss);
  }
  r.total = fuse_losses(r.losses, weights_);
  return r;
}

PerStream<Real> FewShotModel::fusion_weights() const {
  PerStream<Real> w = weights_.effective();
  for (Stream s : kAllStreams)
    if (!enabled().contains(s)) w[index_of(s)] = 0;
  return w;
}

std::vector<NamedTensor> FewShotModel::parameters() {
  std::vector<NamedTensor> params;
  std::vector<NamedTensor> buffers;
  embedding_.collect(params, buffers);
  heads_.collect(params, buffers);
  if (weights_.mode() == WeightMode::kLearned) params.push_back({"weights.log_vars", weights_.log_vars()});
  return params;
}

std::vector<NamedTensor> FewShotModel::buffers() {
  std::vector<NamedTensor> params;
  std::vector<NamedTensor> buffers;
  embedding_.collect(params, buffers);
  heads_.collect(params, buffers);
  return buffers;
}

}  // namespace fewshot
