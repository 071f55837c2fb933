#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fewshot/tensor.hpp"

namespace fewshot {

struct AdamConfig {
  Real lr = 1e-3;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
};

// One bias-corrected Adam update of `params` in place. `step` is the 1-based
// index of this update; `m` and `v` start as zeros.
void adam_step(std::span<Real> params, std::span<const Real> grads,
               std::span<Real> m, std::span<Real> v, std::uint64_t step,
               const AdamConfig& config);

// Adam over a fixed list of parameter tensors.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config);

  // Applies one update from the parameters' accumulated gradients.
  // Parameters that received no gradient this pass are left untouched.
  void step();
  void zero_grad();

  Real lr() const { return config_.lr; }
  void set_lr(Real lr) { config_.lr = lr; }
  const AdamConfig& config() const { return config_; }

  std::uint64_t step_count() const { return step_; }
  void set_step_count(std::uint64_t step) { step_ = step; }
  std::span<const Tensor> params() const { return params_; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }

 private:
  std::vector<Tensor> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  AdamConfig config_;
  std::uint64_t step_ = 0;
};

}  // namespace fewshot
