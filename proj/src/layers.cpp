#include "fewshot/layers.hpp"

#include <cmath>

namespace fewshot {

Tensor kaiming_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<Real> values(shape_numel(shape));
  for (Real& v : values) v = static_cast<Real>(stddev * rng.normal());
  return Tensor::from(std::move(shape), std::move(values), true);
}

ConvBlock::ConvBlock(std::size_t in_channels, std::size_t out_channels, bool pool, Rng& rng,
                     std::size_t kernel, std::size_t padding)
    : pool_(pool), padding_(padding) {
  weight = kaiming_normal({out_channels, in_channels, kernel, kernel},
                          in_channels * kernel * kernel, rng);
  bias = Tensor::zeros({out_channels}, true);
  gamma = Tensor::full({out_channels}, Real(1), true);
  beta = Tensor::zeros({out_channels}, true);
  bn = BatchNormState::create(out_channels);
}

Tensor ConvBlock::forward(const Tensor& x, bool training) {
  return finish(conv2d(x, weight, bias, padding_), training);
}

Tensor ConvBlock::finish(const Tensor& conv_out, bool training) {
  Tensor h = pool_ ? maxpool2d(conv_out) : conv_out;
  return relu(batchnorm(h, gamma, beta, bn, training));
}

std::size_t ConvBlock::parameter_count() const {
  return weight.numel() + bias.numel() + gamma.numel() + beta.numel();
}

void ConvBlock::collect(const std::string& prefix, std::vector<NamedTensor>& params,
                        std::vector<NamedTensor>& buffers) {
  params.push_back({prefix + ".conv.weight", weight});
  params.push_back({prefix + ".conv.bias", bias});
  params.push_back({prefix + ".bn.gamma", gamma});
  params.push_back({prefix + ".bn.beta", beta});
  buffers.push_back({prefix + ".bn.running_mean", bn.running_mean});
  buffers.push_back({prefix + ".bn.running_var", bn.running_var});
}

Linear::Linear(std::size_t in_features, std::size_t out_features, Rng& rng) {
  weight = kaiming_normal({out_features, in_features}, in_features, rng);
  bias = Tensor::zeros({out_features}, true);
}

void Linear::collect(const std::string& prefix, std::vector<NamedTensor>& params) {
  params.push_back({prefix + ".weight", weight});
  params.push_back({prefix + ".bias", bias});
}

}  // namespace fewshot
