// AVX2+FMA kernels. Functions carry a target attribute instead of compiling
// the whole file with -mavx2, so no inline library code built for AVX2 can
// leak into callers on older CPUs.

#include "fewshot/kernels.hpp"

#include <algorithm>
#include <vector>

#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
#define FEWSHOT_HAVE_AVX2 1
#include <immintrin.h>
#else
#define FEWSHOT_HAVE_AVX2 0
#endif

namespace fewshot::kernels {

#if FEWSHOT_HAVE_AVX2

#define FEWSHOT_AVX2 __attribute__((target("avx2,fma")))

namespace {

#ifdef FEWSHOT_FLOAT32
using VReg = __m256;
constexpr std::size_t kLanes = 8;
#define V_ZERO() _mm256_setzero_ps()
#define V_LOAD(p) _mm256_loadu_ps(p)
#define V_STORE(p, v) _mm256_storeu_ps(p, v)
#define V_SET1(x) _mm256_set1_ps(x)
#define V_FMA(a, b, c) _mm256_fmadd_ps(a, b, c)
#define V_ADD(a, b) _mm256_add_ps(a, b)
#else
using VReg = __m256d;
constexpr std::size_t kLanes = 4;
#define V_ZERO() _mm256_setzero_pd()
#define V_LOAD(p) _mm256_loadu_pd(p)
#define V_STORE(p, v) _mm256_storeu_pd(p, v)
#define V_SET1(x) _mm256_set1_pd(x)
#define V_FMA(a, b, c) _mm256_fmadd_pd(a, b, c)
#define V_ADD(a, b) _mm256_add_pd(a, b)
#endif

// Cache-blocked GEMM: B is packed into kc x kNr column panels and A into
// kMr x kc row panels, so the micro-kernel streams both from L1/L2.
constexpr std::size_t kNr = 2 * kLanes;
constexpr std::size_t kMr = 6;
constexpr std::size_t kKc = 256;
constexpr std::size_t kMc = 96;
constexpr std::size_t kNc = 1024;

// Element (i, p) of op(A) lives at a[i * rs + p * cs]; likewise for B.
void pack_a(std::size_t mc, std::size_t kc, const Real* a, std::size_t rs, std::size_t cs, Real* out) {
  for (std::size_t i0 = 0; i0 < mc; i0 += kMr) {
    const std::size_t rows = std::min(kMr, mc - i0);
    if (rows < kMr) std::fill(out, out + kMr * kc, Real(0));
    for (std::size_t r = 0; r < rows; ++r) {
      const Real* src = a + (i0 + r) * rs;
      for (std::size_t p = 0; p < kc; ++p) out[p * kMr + r] = src[p * cs];
    }
    out += kMr * kc;
  }
}

void pack_b(std::size_t kc, std::size_t nc, const Real* b, std::size_t rs, std::size_t cs, Real* out) {
  for (std::size_t j0 = 0; j0 < nc; j0 += kNr) {
    const std::size_t cols = std::min(kNr, nc - j0);
    if (cs == 1) {
      for (std::size_t p = 0; p < kc; ++p) {
        const Real* row = b + p * rs + j0;
        for (std::size_t c = 0; c < cols; ++c) out[p * kNr + c] = row[c];
        for (std::size_t c = cols; c < kNr; ++c) out[p * kNr + c] = Real(0);
      }
    } else {
      if (cols < kNr) std::fill(out, out + kNr * kc, Real(0));
      for (std::size_t c = 0; c < cols; ++c) {
        const Real* src = b + (j0 + c) * cs;
        for (std::size_t p = 0; p < kc; ++p) out[p * kNr + c] = src[p * rs];
      }
    }
    out += kNr * kc;
  }
}

// C[rows, cols] (+)= Apanel * Bpanel over kc.
FEWSHOT_AVX2 void micro_kernel(std::size_t kc, const Real* ap, const Real* bp, Real* c,
                               std::size_t ldc, std::size_t rows, std::size_t cols,
                               bool accumulate) {
  VReg acc[kMr][2];
  for (auto& r : acc) r[0] = r[1] = V_ZERO();
  for (std::size_t p = 0; p < kc; ++p) {
    const VReg b0 = V_LOAD(bp);
    const VReg b1 = V_LOAD(bp + kLanes);
    for (std::size_t r = 0; r < kMr; ++r) {
      const VReg av = V_SET1(ap[r]);
      acc[r][0] = V_FMA(av, b0, acc[r][0]);
      acc[r][1] = V_FMA(av, b1, acc[r][1]);
    }
    ap += kMr;
    bp += kNr;
  }
  if (rows == kMr && cols == kNr) {
    for (std::size_t r = 0; r < kMr; ++r) {
      Real* cr = c + r * ldc;
      if (accumulate) {
        V_STORE(cr, V_ADD(acc[r][0], V_LOAD(cr)));
        V_STORE(cr + kLanes, V_ADD(acc[r][1], V_LOAD(cr + kLanes)));
      } else {
        V_STORE(cr, acc[r][0]);
        V_STORE(cr + kLanes, acc[r][1]);
      }
    }
    return;
  }
  alignas(32) Real tile[kMr][kNr];
  for (std::size_t r = 0; r < kMr; ++r) {
    V_STORE(tile[r], acc[r][0]);
    V_STORE(tile[r] + kLanes, acc[r][1]);
  }
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t q = 0; q < cols; ++q)
      c[r * ldc + q] = accumulate ? c[r * ldc + q] + tile[r][q] : tile[r][q];
}

FEWSHOT_AVX2 void gemm_avx2(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                            const Real* a, std::size_t lda, const Real* b,
                            std::size_t ldb, Real* c, std::size_t ldc,
                            bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate)
      for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, Real(0));
    return;
  }
  const std::size_t a_rs = trans_a ? 1 : lda, a_cs = trans_a ? lda : 1;
  const std::size_t b_rs = trans_b ? 1 : ldb, b_cs = trans_b ? ldb : 1;
  thread_local std::vector<Real> a_buf;
  thread_local std::vector<Real> b_buf;
  a_buf.resize(((kMc + kMr - 1) / kMr) * kMr * kKc);
  b_buf.resize(((kNc + kNr - 1) / kNr) * kNr * kKc);
  for (std::size_t jc = 0; jc < n; jc += kNc) {
    const std::size_t nc = std::min(kNc, n - jc);
    for (std::size_t pc = 0; pc < k; pc += kKc) {
      const std::size_t kc = std::min(kKc, k - pc);
      const bool acc = accumulate || pc > 0;
      pack_b(kc, nc, b + pc * b_rs + jc * b_cs, b_rs, b_cs, b_buf.data());
      for (std::size_t ic = 0; ic < m; ic += kMc) {
        const std::size_t mc = std::min(kMc, m - ic);
        pack_a(mc, kc, a + ic * a_rs + pc * a_cs, a_rs, a_cs, a_buf.data());
        for (std::size_t jr = 0; jr < nc; jr += kNr) {
          const Real* bp = b_buf.data() + (jr / kNr) * kNr * kc;
          for (std::size_t ir = 0; ir < mc; ir += kMr) {
            micro_kernel(kc, a_buf.data() + (ir / kMr) * kMr * kc, bp,
                         c + (ic + ir) * ldc + jc + jr, ldc, std::min(kMr, mc - ir),
                         std::min(kNr, nc - jr), acc);
          }
        }
      }
    }
  }
}

FEWSHOT_AVX2 Real dot_avx2(const Real* x, const Real* y, std::size_t n) {
  VReg s0 = V_ZERO();
  VReg s1 = V_ZERO();
  std::size_t i = 0;
  for (; i + 2 * kLanes <= n; i += 2 * kLanes) {
    s0 = V_FMA(V_LOAD(x + i), V_LOAD(y + i), s0);
    s1 = V_FMA(V_LOAD(x + i + kLanes), V_LOAD(y + i + kLanes), s1);
  }
  for (; i + kLanes <= n; i += kLanes)
    s0 = V_FMA(V_LOAD(x + i), V_LOAD(y + i), s0);
  alignas(32) Real lanes[kLanes];
  V_STORE(lanes, V_ADD(s0, s1));
  Real s = 0;
  for (std::size_t l = 0; l < kLanes; ++l) s += lanes[l];
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

FEWSHOT_AVX2 void axpy_avx2(std::size_t n, Real alpha, const Real* x,
                            Real* y) {
  const VReg av = V_SET1(alpha);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    V_STORE(y + i, V_FMA(av, V_LOAD(x + i), V_LOAD(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

const KernelTable* avx2_table() {
  static const bool supported =
      __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  static const KernelTable table{"avx2", &gemm_avx2, &dot_avx2, &axpy_avx2};
  return supported ? &table : nullptr;
}

#else

const KernelTable* avx2_table() { return nullptr; }

#endif

}  // namespace fewshot::kernels
