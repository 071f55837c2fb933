#include "fewshot/adam.hpp"

#include <cmath>

#include "fewshot/error.hpp"

namespace fewshot {

void adam_step(std::span<Real> params, std::span<const Real> grads,
               std::span<Real> m, std::span<Real> v, std::uint64_t step,
               const AdamConfig& config) {
  if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size()) {
    throw DimensionError("adam_step buffers differ in size");
  }
  if (step == 0) throw ContractError("adam_step counts steps from 1");
  const Real bc1 = Real(1) - std::pow(config.beta1, static_cast<Real>(step));
  const Real bc2 = Real(1) - std::pow(config.beta2, static_cast<Real>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Real g = grads[i];
    m[i] = config.beta1 * m[i] + (1 - config.beta1) * g;
    v[i] = config.beta2 * v[i] + (1 - config.beta2) * g * g;
    const Real mhat = m[i] / bc1;
    const Real vhat = v[i] / bc2;
    params[i] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
  }
}

Adam::Adam(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (const Tensor& p : params_) {
    m_.push_back(Tensor::zeros(p.shape()));
    v_.push_back(Tensor::zeros(p.shape()));
  }
}

void Adam::step() {
  ++step_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    adam_step(p.mutable_data(), p.grad(), m_[i].mutable_data(), v_[i].mutable_data(), step_, config_);
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

}  // namespace fewshot
