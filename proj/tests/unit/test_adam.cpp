#include <doctest.h>

#include <cmath>
#include <vector>

#include "fewshot/adam.hpp"
#include "fewshot/error.hpp"

using namespace fewshot;

TEST_CASE("zero gradient leaves parameters unchanged") {
  std::vector<Real> p{1.0, -2.0}, g{0, 0}, m{0, 0}, v{0, 0};
  for (std::uint64_t t = 1; t <= 3; ++t) adam_step(p, g, m, v, t, {});
  CHECK(p[0] == 1.0);
  CHECK(p[1] == -2.0);
}

TEST_CASE("first step moves by lr against the gradient sign") {
  AdamConfig cfg;
  cfg.lr = 0.01;
  for (Real grad : {3.7, -0.002}) {
    std::vector<Real> p{0.5}, g{grad}, m{0}, v{0};
    adam_step(p, g, m, v, 1, cfg);
    const Real step = p[0] - 0.5;
    // |update| = lr * |g| / (|g| + eps)
    CHECK(std::abs(std::abs(step) - cfg.lr) < 1e-9 + cfg.lr * cfg.eps / std::abs(grad));
    CHECK((step < 0) == (grad > 0));
  }
}

TEST_CASE("ten steps on w^2 shrink |w| monotonically") {
  AdamConfig cfg;
  cfg.lr = 0.1;
  std::vector<Real> w{1.0}, m{0}, v{0};
  Real prev = 1.0;
  for (std::uint64_t t = 1; t <= 10; ++t) {
    std::vector<Real> g{2 * w[0]};
    adam_step(w, g, m, v, t, cfg);
    CHECK(std::abs(w[0]) < prev);
    prev = std::abs(w[0]);
  }
}

TEST_CASE("adam matches a hand-rolled bias-corrected update") {
  AdamConfig cfg{0.05, 0.8, 0.99, 1e-8};
  std::vector<Real> p{0.3}, m{0}, v{0};
  double rp = 0.3, rm = 0, rv = 0;
  const double grads[] = {0.4, -1.2, 0.9, 0.1};
  for (std::uint64_t t = 1; t <= 4; ++t) {
    std::vector<Real> g{grads[t - 1]};
    adam_step(p, g, m, v, t, cfg);
    rm = 0.8 * rm + 0.2 * grads[t - 1];
    rv = 0.99 * rv + 0.01 * grads[t - 1] * grads[t - 1];
    rp -= 0.05 * (rm / (1 - std::pow(0.8, t))) / (std::sqrt(rv / (1 - std::pow(0.99, t))) + 1e-8);
    CHECK(std::abs(p[0] - rp) < 1e-14);
  }
  CHECK_THROWS_AS(adam_step(p, std::vector<Real>{0.0}, m, v, 0, cfg), ContractError);
}

TEST_CASE("optimizer skips parameters without gradients") {
  Tensor a = Tensor::from({1}, {1.0}, true);
  Tensor b = Tensor::from({1}, {1.0}, true);
  Adam opt({a, b}, AdamConfig{});
  a.mutable_grad()[0] = 1.0;
  opt.step();
  CHECK(a.data()[0] < 1.0);
  CHECK(b.data()[0] == 1.0);
  CHECK(opt.step_count() == 1);
}
