#pragma once
// Differentiable tensor operations. All of them work in the engine's Real
// precision, record a graph node when an input requires a gradient, and throw
// DimensionError on incompatible extents or ContractError on bad arguments.

#include <cstddef>
#include <span>

#include "fewshot/tensor.hpp"

namespace fewshot {

// ---- elementwise, numpy-style broadcasting --------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, Real s);
Tensor mul_scalar(const Tensor& a, Real s);
Tensor neg(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor exp(const Tensor& a);
// Natural log of max(a, floor). With floor = 0 the domain is a > 0.
Tensor log(const Tensor& a, Real floor = 0);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softmax(const Tensor& a, int axis);

// ---- shape ----------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape);
// 2-D transpose.
Tensor transpose(const Tensor& a);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor narrow(const Tensor& a, int axis, std::size_t start, std::size_t length);
// Gathers slices along axis 0; indices may repeat.
Tensor index_select(const Tensor& a, std::span<const std::size_t> indices);
// [N,C] -> [N,C,h,w], every location holding the channel vector.
Tensor tile_spatial(const Tensor& a, std::size_t height, std::size_t width);

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a, int axis, bool keepdim = false);
Tensor mean(const Tensor& a, int axis, bool keepdim = false);
// sqrt of the sum of squares; the gradient at the zero tensor is taken as 0.
Tensor frobenius_norm(const Tensor& a);
// Norm of every slice along axis 0: [N, ...] -> [N].
Tensor frobenius_norm_per_sample(const Tensor& a);
// out[i,j] = ||a_i - b_j||_F over slices along axis 0 of two equally shaped
// stacks, a [Na, ...] and b [Nb, ...]. Subgradient 0 where a_i == b_j.
Tensor pairwise_distance(const Tensor& a, const Tensor& b);
// [N,C,H,W] -> [N,C]. Max routes its gradient to the first maximum.
Tensor global_max_pool(const Tensor& a);
Tensor global_avg_pool(const Tensor& a);

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// Batched product over axis 0 of 3-D tensors, optionally transposing the
// last two axes of either operand.
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_a = false,
           bool transpose_b = false);

// ---- layers ---------------------------------------------------------------

// Stride-1 cross-correlation with a square kernel and zero padding.
// input [N,Cin,H,W], kernel [Cout,Cin,k,k], bias [Cout] or undefined.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::size_t padding);
// 2x2 window, stride 2. A trailing odd row/column is dropped. Ties go to the
// first maximum in row-major window order.
Tensor maxpool2d(const Tensor& input);

struct BatchNormState {
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C]
  Real momentum = 0.1;
  Real eps = 1e-5;

  static BatchNormState create(std::size_t channels);
};

// Per-channel normalisation of [N,C,H,W] (or [N,C]). In training mode the
// batch statistics are used and the running statistics are updated in place
// (unbiased variance); in eval mode the running statistics are used.
Tensor batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                 BatchNormState& state, bool training);

// input [N,Fin], weight [Fout,Fin], bias [Fout] -> [N,Fout]
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

}  // namespace fewshot
