#pragma once

#include <cblas.h>

#include <type_traits>

namespace vseg::blas {

/// Row-major general matrix multiply, C = alpha * op(A) * op(B) + beta * C.
template <class T>
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda,
                 const T* b, int ldb, T beta, T* c, int ldc) {
  const auto ta = trans_a ? CblasTrans : CblasNoTrans;
  const auto tb = trans_b ? CblasTrans : CblasNoTrans;
  if constexpr (std::is_same_v<T, float>) {
    cblas_sgemm(CblasRowMajor, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
  } else {
    static_assert(std::is_same_v<T, double>, "gemm supports float and double");
    cblas_dgemm(CblasRowMajor, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
  }
}

/// Caps the BLAS worker pool. OpenBLAS accepts any positive count.
inline void set_threads(int threads) { openblas_set_num_threads(threads > 0 ? threads : 1); }

}  // namespace vseg::blas
