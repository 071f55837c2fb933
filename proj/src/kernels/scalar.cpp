#include <algorithm>

#include "fewshot/kernels.hpp"

namespace fewshot::kernels {
namespace {

void gemm_scalar(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
                 std::size_t k, const Real* a, std::size_t lda, const Real* b,
                 std::size_t ldb, Real* c, std::size_t ldc, bool accumulate) {
  const std::size_t a_row = trans_a ? 1 : lda, a_col = trans_a ? lda : 1;
  for (std::size_t i = 0; i < m; ++i) {
    Real* crow = c + i * ldc;
    if (!accumulate) std::fill(crow, crow + n, Real(0));
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = a[i * a_row + p * a_col];
      if (trans_b) {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * ldb + p];
      } else {
        const Real* brow = b + p * ldb;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

Real dot_scalar(const Real* x, const Real* y, std::size_t n) {
  Real s = 0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_scalar(std::size_t n, Real alpha, const Real* x, Real* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{"scalar", &gemm_scalar, &dot_scalar,
                                 &axpy_scalar};
  return table;
}

}  // namespace fewshot::kernels
