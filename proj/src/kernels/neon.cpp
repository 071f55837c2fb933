#include "fewshot/kernels.hpp"

#if defined(__aarch64__) && defined(__ARM_NEON)
#include <arm_neon.h>

#include <vector>

namespace fewshot::kernels {
namespace {

#ifdef FEWSHOT_FLOAT32
using VReg = float32x4_t;
constexpr std::size_t kLanes = 4;
inline VReg vzero() { return vdupq_n_f32(0.0f); }
inline VReg vload(const Real* p) { return vld1q_f32(p); }
inline void vstore(Real* p, VReg v) { vst1q_f32(p, v); }
inline VReg vset1(Real x) { return vdupq_n_f32(x); }
inline VReg vfma(VReg acc, VReg a, VReg b) { return vfmaq_f32(acc, a, b); }
inline Real vsum(VReg v) { return vaddvq_f32(v); }
#else
using VReg = float64x2_t;
constexpr std::size_t kLanes = 2;
inline VReg vzero() { return vdupq_n_f64(0.0); }
inline VReg vload(const Real* p) { return vld1q_f64(p); }
inline void vstore(Real* p, VReg v) { vst1q_f64(p, v); }
inline VReg vset1(Real x) { return vdupq_n_f64(x); }
inline VReg vfma(VReg acc, VReg a, VReg b) { return vfmaq_f64(acc, a, b); }
inline Real vsum(VReg v) { return vaddvq_f64(v); }
#endif

void gemm_neon(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
               std::size_t k, const Real* a, std::size_t lda, const Real* b,
               std::size_t ldb, Real* c, std::size_t ldc, bool accumulate) {
  // Transposed operands are copied into row-major scratch first.
  std::vector<Real> at, bt;
  if (trans_a) {
    at.resize(m * k);
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t i = 0; i < m; ++i) at[i * k + p] = a[p * lda + i];
    a = at.data(), lda = k;
  }
  if (trans_b) {
    bt.resize(k * n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * ldb + p];
    b = bt.data(), ldb = n;
  }
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = a + i * lda;
    Real* crow = c + i * ldc;
    std::size_t j = 0;
    for (; j + 2 * kLanes <= n; j += 2 * kLanes) {
      VReg c0 = accumulate ? vload(crow + j) : vzero();
      VReg c1 = accumulate ? vload(crow + j + kLanes) : vzero();
      for (std::size_t p = 0; p < k; ++p) {
        const VReg av = vset1(arow[p]);
        const Real* bp = b + p * ldb + j;
        c0 = vfma(c0, av, vload(bp));
        c1 = vfma(c1, av, vload(bp + kLanes));
      }
      vstore(crow + j, c0);
      vstore(crow + j + kLanes, c1);
    }
    for (; j < n; ++j) {
      Real s = accumulate ? crow[j] : Real(0);
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * b[p * ldb + j];
      crow[j] = s;
    }
  }
}

Real dot_neon(const Real* x, const Real* y, std::size_t n) {
  VReg s0 = vzero();
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) s0 = vfma(s0, vload(x + i), vload(y + i));
  Real s = vsum(s0);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_neon(std::size_t n, Real alpha, const Real* x, Real* y) {
  const VReg av = vset1(alpha);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    vstore(y + i, vfma(vload(y + i), av, vload(x + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

const KernelTable* neon_table() {
  static const KernelTable table{"neon", &gemm_neon, &dot_neon, &axpy_neon};
  return &table;
}

}  // namespace fewshot::kernels

#else

namespace fewshot::kernels {
const KernelTable* neon_table() { return nullptr; }
}  // namespace fewshot::kernels

#endif
