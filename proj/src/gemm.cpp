#include "resnext/gemm.hpp"

// Parallelism comes from the callers; keep each product on one thread.
#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

namespace resnext::blas {
namespace {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstView = Eigen::Map<const RowMajor<T>, Eigen::Unaligned, Eigen::OuterStride<>>;
template <typename T>
using View = Eigen::Map<RowMajor<T>, Eigen::Unaligned, Eigen::OuterStride<>>;

// op(X) as an m x n view of a row-major buffer with leading dimension ld.
template <typename T, typename F>
void with_op(Trans t, const T* x, int rows, int cols, int ld, F&& f) {
  if (t == Trans::no) {
    f(ConstView<T>(x, rows, cols, Eigen::OuterStride<>(ld)));
  } else {
    f(ConstView<T>(x, cols, rows, Eigen::OuterStride<>(ld)).transpose());
  }
}

template <typename T>
void gemm_impl(Trans ta, Trans tb, int m, int n, int k, T alpha, const T* a, int lda, const T* b,
               int ldb, T beta, T* c, int ldc) {
  if (m == 0 || n == 0) return;
  View<T> C(c, m, n, Eigen::OuterStride<>(ldc));
  if (beta == T(0)) {
    C.setZero();
  } else if (beta != T(1)) {
    C *= beta;
  }
  if (k == 0) return;
  with_op(ta, a, m, k, lda, [&](const auto& A) {
    with_op(tb, b, k, n, ldb, [&](const auto& B) { C.noalias() += alpha * (A * B); });
  });
}

}  // namespace

template <>
void gemm<float>(Trans ta, Trans tb, int m, int n, int k, float alpha, const float* a, int lda,
                 const float* b, int ldb, float beta, float* c, int ldc) {
  gemm_impl(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <>
void gemm<double>(Trans ta, Trans tb, int m, int n, int k, double alpha, const double* a, int lda,
                  const double* b, int ldb, double beta, double* c, int ldc) {
  gemm_impl(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

}  // namespace resnext::blas
