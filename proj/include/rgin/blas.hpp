#pragma once

#include <cblas.h>

#include <cstddef>

namespace rgin::blas {

/// Pins the BLAS worker pool; 1 gives a reproducible reduction order.
inline void set_threads(int n) { openblas_set_num_threads(n); }

// C = alpha * op(A) * op(B) + beta * C, all row-major.
inline void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, float alpha,
                 const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta,
                 float* c, std::size_t ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

inline void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, double alpha,
                 const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
                 double* c, std::size_t ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

/// Plain row-major product C (+)= A[m x k] * B[k x n] without transposes.
template <class T>
void matmul_into(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                 bool accumulate = false) {
  gemm(false, false, m, n, k, T(1), a, k, b, n, accumulate ? T(1) : T(0), c, n);
}

}  // namespace rgin::blas
