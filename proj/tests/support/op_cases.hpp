#pragma once
// Differentiable op cases shared by the unit gradient checks and the
// acceptance binary.

#include <functional>
#include <string>
#include <vector>

#include "fewshot/ops.hpp"
#include "support/oracles.hpp"

namespace fewshot::testing {

// Contracts an op output with fixed random weights so every output element
// contributes a distinct amount to the scalar.
inline Tensor probe(const Tensor& out, Rng& rng) {
  Rng local(rng.next_u64());
  Tensor w = random_tensor(out.shape(), local);
  return sum(mul(out, w));
}

struct OpCase {
  std::string name;
  std::function<std::vector<Tensor>(Rng&)> make;
  std::function<Tensor(const std::vector<Tensor>&)> apply;
};

inline Tensor positive(Shape s, Rng& rng) { return random_tensor(std::move(s), rng, true, 0.5, 2.0); }

inline std::vector<OpCase> op_cases() {
  auto r = [](Shape s) { return [s](Rng& rng) { return std::vector<Tensor>{random_tensor(s, rng, true)}; }; };
  auto r2 = [](Shape a, Shape b) {
    return [a, b](Rng& rng) { return std::vector<Tensor>{random_tensor(a, rng, true), random_tensor(b, rng, true)}; };
  };
  std::vector<OpCase> cases = {
      {"add", r2({3, 4}, {4}), [](auto& t) { return add(t[0], t[1]); }},
      {"sub", r2({2, 1, 3}, {4, 1}), [](auto& t) { return sub(t[0], t[1]); }},
      {"mul", r2({3, 4}, {3, 1}), [](auto& t) { return mul(t[0], t[1]); }},
      {"div", [](Rng& rng) { return std::vector<Tensor>{random_tensor({3, 4}, rng, true), positive({4}, rng)}; },
       [](auto& t) { return div(t[0], t[1]); }},
      {"add_scalar", r({5}), [](auto& t) { return add_scalar(t[0], 2.5); }},
      {"mul_scalar", r({5}), [](auto& t) { return mul_scalar(t[0], -1.5); }},
      {"square", r({5}), [](auto& t) { return square(t[0]); }},
      {"sqrt", [](Rng& rng) { return std::vector<Tensor>{positive({6}, rng)}; }, [](auto& t) { return sqrt(t[0]); }},
      {"exp", r({6}), [](auto& t) { return exp(t[0]); }},
      {"log", [](Rng& rng) { return std::vector<Tensor>{positive({6}, rng)}; }, [](auto& t) { return log(t[0]); }},
      {"relu", r({3, 5}), [](auto& t) { return relu(t[0]); }},
      {"sigmoid", r({3, 5}), [](auto& t) { return sigmoid(t[0]); }},
      {"softmax", r({3, 5}), [](auto& t) { return softmax(t[0], 1); }},
      {"softmax_axis0", r({3, 5}), [](auto& t) { return softmax(t[0], 0); }},
      {"reshape", r({2, 6}), [](auto& t) { return reshape(t[0], {3, 4}); }},
      {"transpose", r({2, 5}), [](auto& t) { return transpose(t[0]); }},
      {"concat", r2({2, 3, 2}, {2, 1, 2}), [](auto& t) { return concat(std::span<const Tensor>(t), 1); }},
      {"narrow", r({4, 5}), [](auto& t) { return narrow(t[0], 1, 1, 3); }},
      {"index_select", r({4, 3}),
       [](auto& t) {
         const std::size_t idx[] = {2, 0, 2, 3};
         return index_select(t[0], idx);
       }},
      {"tile_spatial", r({2, 3}), [](auto& t) { return tile_spatial(t[0], 2, 3); }},
      {"sum", r({3, 4}), [](auto& t) { return sum(t[0]); }},
      {"mean", r({3, 4}), [](auto& t) { return mean(t[0]); }},
      {"sum_axis", r({3, 4, 2}), [](auto& t) { return sum(t[0], 1); }},
      {"mean_axis", r({3, 4, 2}), [](auto& t) { return mean(t[0], 2, true); }},
      {"frobenius_norm", r({3, 4}), [](auto& t) { return frobenius_norm(t[0]); }},
      {"frobenius_norm_per_sample", r({3, 2, 2}), [](auto& t) { return frobenius_norm_per_sample(t[0]); }},
      {"pairwise_distance", r2({3, 2, 3}, {4, 2, 3}), [](auto& t) { return pairwise_distance(t[0], t[1]); }},
      {"global_max_pool", r({2, 3, 3, 3}), [](auto& t) { return global_max_pool(t[0]); }},
      {"global_avg_pool", r({2, 3, 3, 3}), [](auto& t) { return global_avg_pool(t[0]); }},
      {"matmul", r2({3, 4}, {4, 5}), [](auto& t) { return matmul(t[0], t[1]); }},
      {"bmm", r2({2, 3, 4}, {2, 4, 5}), [](auto& t) { return bmm(t[0], t[1]); }},
      {"bmm_ta", r2({2, 4, 3}, {2, 4, 5}), [](auto& t) { return bmm(t[0], t[1], true, false); }},
      {"bmm_tb", r2({2, 3, 4}, {2, 5, 4}), [](auto& t) { return bmm(t[0], t[1], false, true); }},
      {"conv2d_pad1",
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor({2, 2, 5, 5}, rng, true), random_tensor({3, 2, 3, 3}, rng, true),
                                    random_tensor({3}, rng, true)};
       },
       [](auto& t) { return conv2d(t[0], t[1], t[2], 1); }},
      {"conv2d_pad0_nobias", r2({1, 3, 5, 4}, {2, 3, 3, 3}), [](auto& t) { return conv2d(t[0], t[1], Tensor(), 0); }},
      {"conv2d_1x1", r2({2, 4, 3, 3}, {2, 4, 1, 1}), [](auto& t) { return conv2d(t[0], t[1], Tensor(), 0); }},
      {"maxpool2d", r({2, 2, 4, 5}), [](auto& t) { return maxpool2d(t[0]); }},
      {"linear",
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor({3, 4}, rng, true), random_tensor({2, 4}, rng, true),
                                    random_tensor({2}, rng, true)};
       },
       [](auto& t) { return linear(t[0], t[1], t[2]); }},
      {"batchnorm_train",
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor({3, 2, 2, 2}, rng, true), random_tensor({2}, rng, true),
                                    random_tensor({2}, rng, true)};
       },
       [](auto& t) {
         BatchNormState st = BatchNormState::create(2);
         return batchnorm(t[0], t[1], t[2], st, true);
       }},
      {"batchnorm_eval",
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor({3, 2, 2, 2}, rng, true), random_tensor({2}, rng, true),
                                    random_tensor({2}, rng, true)};
       },
       [](auto& t) {
         BatchNormState st = BatchNormState::create(2);
         st.running_mean.mutable_data()[0] = 0.3;
         st.running_var.mutable_data()[1] = 2.0;
         return batchnorm(t[0], t[1], t[2], st, false);
       }},
      {"batchnorm_2d",
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor({5, 3}, rng, true), random_tensor({3}, rng, true),
                                    random_tensor({3}, rng, true)};
       },
       [](auto& t) {
         BatchNormState st = BatchNormState::create(3);
         return batchnorm(t[0], t[1], t[2], st, true);
       }},
  };
  return cases;
}

}  // namespace fewshot::testing
