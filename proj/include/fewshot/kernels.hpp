#pragma once
// Dense arithmetic kernels behind the tensor engine.
//
// Every kernel has a portable scalar reference implementation. SIMD variants
// (AVX2+FMA on x86-64, NEON on aarch64) are compiled in when the toolchain
// supports them and selected once at startup from the host CPU features. The
// FEWSHOT_SIMD environment variable (scalar|avx2|neon) overrides the choice.
// Variants are equivalent up to floating-point reassociation; the kernel
// tests pin that to a relative 1e-12 in double precision.

#include <cstddef>
#include <string_view>

#include "fewshot/real.hpp"

namespace fewshot::kernels {

// Row-major C[m,n] (+)= op(A)[m,k] * op(B)[k,n], op transposing the stored
// matrix when the flag is set (A is then stored [k,m], B [n,k]). When
// `accumulate` is false C is overwritten. Leading dimensions are in elements
// and refer to the stored layout.
using GemmFn = void (*)(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                        const Real* a, std::size_t lda, const Real* b,
                        std::size_t ldb, Real* c, std::size_t ldc,
                        bool accumulate);
using DotFn = Real (*)(const Real* x, const Real* y, std::size_t n);
// y += alpha * x
using AxpyFn = void (*)(std::size_t n, Real alpha, const Real* x, Real* y);

struct KernelTable {
  std::string_view name;
  GemmFn gemm;
  DotFn dot;
  AxpyFn axpy;
};

const KernelTable& scalar_table();
// nullptr when the variant was not compiled in or the CPU lacks the features.
const KernelTable* avx2_table();
const KernelTable* neon_table();

// The table used by the tensor engine.
const KernelTable& active();
// Overrides the runtime choice, e.g. to compare variants in tests. Returns
// false (and leaves the selection untouched) if the variant is unavailable.
bool select(std::string_view name);

}  // namespace fewshot::kernels
