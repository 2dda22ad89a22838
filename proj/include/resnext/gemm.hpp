#pragma once

namespace resnext::blas {

enum class Trans { no, yes };

// Row-major C = alpha * op(A) * op(B) + beta * C, backed by Eigen.
// Runs single-threaded; callers parallelize over the batch.
template <typename T>
void gemm(Trans ta, Trans tb, int m, int n, int k, T alpha, const T* a, int lda, const T* b,
          int ldb, T beta, T* c, int ldc);

}  // namespace resnext::blas
