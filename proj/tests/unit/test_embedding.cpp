#include <doctest.h>

#include "fewshot/embedding.hpp"
#include "fewshot/error.hpp"
#include "support/oracles.hpp"

using namespace fewshot;
using fewshot::testing::random_tensor;

TEST_CASE("output shapes for 84x84 RGB and 24x24 grayscale") {
  Rng rng(1);
  EmbeddingNet rgb(3, rng);
  CHECK(rgb.embed(random_tensor({1, 3, 84, 84}, rng), false).shape() == Shape{1, 64, 21, 21});
  EmbeddingNet gray(1, rng);
  CHECK(gray.embed(random_tensor({2, 1, 24, 24}, rng), true).shape() == Shape{2, 64, 6, 6});
}

TEST_CASE("parameter count closed form") {
  Rng rng(2);
  EmbeddingNet net(1, rng);
  CHECK(net.parameter_count() == 64 * 10 + 128 + 3 * (64 * 577 + 128));
  CHECK(EmbeddingNet::expected_parameter_count(3) == 64 * 28 + 128 + 3 * (64 * 577 + 128));
  std::vector<NamedTensor> params, buffers;
  net.collect(params, buffers);
  std::size_t total = 0;
  for (auto& p : params) total += p.tensor.numel();
  CHECK(total == net.parameter_count());
  CHECK(buffers.size() == 8);
}

TEST_CASE("configuration errors") {
  Rng rng(3);
  EmbeddingNet net(1, rng);
  CHECK_THROWS_AS(net.embed(Tensor::zeros({1, 3, 24, 24}), false), ConfigError);
  CHECK_THROWS_AS(net.embed(Tensor::zeros({1, 1, 22, 24}), false), ConfigError);
}

TEST_CASE("eval mode is deterministic and batch permutation-equivariant") {
  Rng rng(4);
  EmbeddingNet net(1, rng);
  Tensor a = random_tensor({1, 1, 12, 12}, rng), b = random_tensor({1, 1, 12, 12}, rng);
  const std::array<Tensor, 3> ab{a, b, a};
  Tensor out = net.embed(concat(ab, 0), false);
  const std::array<Tensor, 2> ba{b, a};
  Tensor rev = net.embed(concat(ba, 0), false);
  const std::size_t per = out.numel() / 3;
  for (std::size_t i = 0; i < per; ++i) {
    CHECK(out.data()[i] == out.data()[2 * per + i]);
    CHECK(out.data()[i] == rev.data()[per + i]);
    CHECK(out.data()[per + i] == rev.data()[i]);
  }
}

TEST_CASE("shot aggregation") {
  Rng rng(5);
  Tensor one = random_tensor({1, 4, 2, 2}, rng);
  Tensor agg = aggregate_shots(one);
  CHECK(agg.shape() == Shape{4, 2, 2});
  for (std::size_t i = 0; i < agg.numel(); ++i) CHECK(agg.data()[i] == one.data()[i]);

  const std::array<Tensor, 2> twice{one, one};
  Tensor doubled = aggregate_shots(concat(twice, 0));
  for (std::size_t i = 0; i < doubled.numel(); ++i) CHECK(doubled.data()[i] == 2 * one.data()[i]);

  Tensor five = random_tensor({5, 3, 2, 2}, rng);
  Tensor s = aggregate_shots(five);
  Tensor m = aggregate_shots(five, ShotAggregation::kMean);
  for (std::size_t i = 0; i < 12; ++i) {
    Real ref = 0;
    for (std::size_t k = 0; k < 5; ++k) ref += five.data()[k * 12 + i];
    CHECK(s.data()[i] == ref);
    CHECK(m.data()[i] == doctest::Approx(ref / 5).epsilon(1e-14));
  }

  // class-major support: 2 ways x 3 shots
  Tensor support = random_tensor({6, 3, 2, 2}, rng);
  Tensor per_class = aggregate_support(support, 2, 3, ShotAggregation::kSum);
  CHECK(per_class.shape() == Shape{2, 3, 2, 2});
  Real ref = 0;
  for (std::size_t k = 3; k < 6; ++k) ref += support.data()[k * 12 + 5];
  CHECK(per_class.data()[12 + 5] == doctest::Approx(ref).epsilon(1e-15));
  CHECK_THROWS(aggregate_support(support, 4, 2, ShotAggregation::kSum));
}
