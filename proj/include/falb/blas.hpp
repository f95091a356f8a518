#pragma once

#include <cstdint>

namespace falb::blas {

/// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C where op transposes
/// when the flag is set. A is (m x k) before op, B is (k x n) before op,
/// C is (m x n).
///
/// Backed by OpenBLAS when it can be dlopen'ed (with the CPU kernel pinned
/// before load and the thread count pinned to 1 so results are bitwise
/// reproducible run to run), otherwise by a portable blocked loop.
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, float alpha, const float* a,
          int64_t lda, const float* b, int64_t ldb, float beta, float* c, int64_t ldc);
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, double alpha,
          const double* a, int64_t lda, const double* b, int64_t ldb, double beta, double* c,
          int64_t ldc);

/// "openblas/<coretype>" or "internal".
const char* backend();

/// Internal fallback path, exposed for testing against the BLAS path.
template <typename T>
void naive_gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, T alpha, const T* a,
                int64_t lda, const T* b, int64_t ldb, T beta, T* c, int64_t ldc);

}  // namespace falb::blas
