#pragma once
// Parameterised building blocks shared by the embedding network and the
// stream heads.

#include <string>
#include <vector>

#include "fewshot/ops.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Zero-mean Gaussian with std sqrt(2 / fan_in), marked trainable.
Tensor kaiming_normal(Shape shape, std::size_t fan_in, Rng& rng);

// conv3x3 -> [maxpool 2x2] -> batchnorm -> ReLU
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(std::size_t in_channels, std::size_t out_channels, bool pool, Rng& rng,
            std::size_t kernel = 3, std::size_t padding = 1);

  Tensor forward(const Tensor& x, bool training);
  // Everything after the convolution, for callers that compute the conv
  // themselves (see the split-weight pair scoring in streams).
  Tensor finish(const Tensor& conv_out, bool training);

  bool pools() const { return pool_; }
  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t parameter_count() const;

  void collect(const std::string& prefix, std::vector<NamedTensor>& params,
               std::vector<NamedTensor>& buffers);

  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]
  Tensor gamma;   // [out]
  Tensor beta;    // [out]
  BatchNormState bn;

 private:
  bool pool_ = false;
  std::size_t padding_ = 1;
};

class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in_features, std::size_t out_features, Rng& rng);

  Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
  void collect(const std::string& prefix, std::vector<NamedTensor>& params);

  Tensor weight;  // [out, in]
  Tensor bias;    // [out]
};

}  // namespace fewshot
