#pragma once

#include <array>
#include <vector>

#include "fewshot/layers.hpp"

namespace fewshot {

enum class ShotAggregation { kSum, kMean };

// Conv-64F: four 64-filter 3x3 blocks, the first two followed by 2x2 max
// pooling (conv -> pool -> BN -> ReLU), the last two without (conv -> BN ->
// ReLU). Padding 1 everywhere, so an HxW image maps to 64 x H/4 x W/4.
class EmbeddingNet {
 public:
  static constexpr std::size_t kChannels = 64;
  static constexpr std::size_t kBlocks = 4;

  EmbeddingNet(std::size_t in_channels, Rng& rng);

  // images [N, in_channels, H, W] with H and W divisible by 4.
  Tensor embed(const Tensor& images, bool training);

  std::size_t in_channels() const { return in_channels_; }
  std::size_t parameter_count() const;
  // 64*(9*c_in + 1) + 2*64 for the first block, 64*(9*64 + 1) + 2*64 for each
  // of the other three.
  static std::size_t expected_parameter_count(std::size_t in_channels);

  void collect(std::vector<NamedTensor>& params, std::vector<NamedTensor>& buffers);

 private:
  std::size_t in_channels_;
  std::array<ConvBlock, kBlocks> blocks_;
};

// Combines the K shot feature maps of one class, [K,C,h,w] -> [C,h,w].
Tensor aggregate_shots(const Tensor& features, ShotAggregation mode = ShotAggregation::kSum);

// Per-class aggregation of class-major support features [ways*shots,C,h,w]
// -> [ways,C,h,w].
Tensor aggregate_support(const Tensor& features, std::size_t ways, std::size_t shots,
                         ShotAggregation mode);

}  // namespace fewshot
