#include "fewshot/embedding.hpp"

#include "fewshot/error.hpp"

namespace fewshot {

EmbeddingNet::EmbeddingNet(std::size_t in_channels, Rng& rng) : in_channels_(in_channels) {
  if (in_channels == 0) throw ConfigError("embedding needs at least one input channel");
  for (std::size_t b = 0; b < kBlocks; ++b) {
    blocks_[b] = ConvBlock(b == 0 ? in_channels : kChannels, kChannels, /*pool=*/b < 2, rng);
  }
  if (parameter_count() != expected_parameter_count(in_channels)) {
    throw Error("embedding parameter count does not match the Conv-64F layout");
  }
}

Tensor EmbeddingNet::embed(const Tensor& images, bool training) {
  if (images.ndim() != 4) {
    throw DimensionError("embed expects [N,C,H,W] images, got " + shape_str(images.shape()));
  }
  if (images.dim(1) != in_channels_) {
    throw ConfigError("embedding built for " + std::to_string(in_channels_) +
                      " input channels, got " + std::to_string(images.dim(1)));
  }
  if (images.dim(2) % 4 != 0 || images.dim(3) % 4 != 0) {
    throw ConfigError("image size " + std::to_string(images.dim(2)) + "x" +
                      std::to_string(images.dim(3)) + " is not divisible by 4");
  }
  Tensor h = images;
  for (ConvBlock& block : blocks_) h = block.forward(h, training);
  return h;
}

std::size_t EmbeddingNet::parameter_count() const {
  std::size_t n = 0;
  for (const ConvBlock& b : blocks_) n += b.parameter_count();
  return n;
}

std::size_t EmbeddingNet::expected_parameter_count(std::size_t in_channels) {
  const std::size_t c = kChannels;
  const std::size_t first = c * (9 * in_channels + 1) + 2 * c;
  const std::size_t rest = c * (9 * c + 1) + 2 * c;
  return first + 3 * rest;
}

void EmbeddingNet::collect(std::vector<NamedTensor>& params, std::vector<NamedTensor>& buffers) {
  for (std::size_t b = 0; b < kBlocks; ++b)
    blocks_[b].collect("embedding.block" + std::to_string(b + 1), params, buffers);
}

Tensor aggregate_shots(const Tensor& features, ShotAggregation mode) {
  if (features.ndim() != 4) {
    throw DimensionError("aggregate_shots expects [K,C,h,w], got " + shape_str(features.shape()));
  }
  const std::size_t k = features.dim(0);
  Tensor summed = sum(features, 0);
  return mode == ShotAggregation::kMean ? mul_scalar(summed, Real(1) / static_cast<Real>(k)) : summed;
}

Tensor aggregate_support(const Tensor& features, std::size_t ways, std::size_t shots,
                         ShotAggregation mode) {
  if (ways == 0 || shots == 0) throw ContractError("aggregate_support over an empty class");
  if (features.ndim() != 4 || features.dim(0) != ways * shots) {
    throw DimensionError("support features " + shape_str(features.shape()) + " for " +
                         std::to_string(ways) + "-way " + std::to_string(shots) + "-shot");
  }
  if (shots == 1) return features;
  const Shape map{features.dim(1), features.dim(2), features.dim(3)};
  Tensor grouped = reshape(features, {ways, shots, shape_numel(map)});
  Tensor summed = sum(grouped, 1);
  if (mode == ShotAggregation::kMean) summed = mul_scalar(summed, Real(1) / static_cast<Real>(shots));
  return reshape(summed, {ways, map[0], map[1], map[2]});
}

}  // namespace fewshot
