#pragma once

#include <cstddef>

#include <Eigen/Core>

// Row-major dense matrix products used by linear and convolution layers.
// All routines accumulate into C.
namespace mambapupil::gemm {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using ConstMap = Eigen::Map<const RowMajor<T>>;

template <typename T>
using Map = Eigen::Map<RowMajor<T>>;

/// C(M,N) += A(M,K) * B(K,N)
template <typename T>
void nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  const auto m = static_cast<Eigen::Index>(M), n = static_cast<Eigen::Index>(N), k = static_cast<Eigen::Index>(K);
  Map<T>(C, m, n).noalias() += ConstMap<T>(A, m, k) * ConstMap<T>(B, k, n);
}

/// C(M,N) += A(K,M)^T * B(K,N)
template <typename T>
void tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  const auto m = static_cast<Eigen::Index>(M), n = static_cast<Eigen::Index>(N), k = static_cast<Eigen::Index>(K);
  Map<T>(C, m, n).noalias() += ConstMap<T>(A, k, m).transpose() * ConstMap<T>(B, k, n);
}

/// C(M,N) += A(M,K) * B(N,K)^T
template <typename T>
void nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  const auto m = static_cast<Eigen::Index>(M), n = static_cast<Eigen::Index>(N), k = static_cast<Eigen::Index>(K);
  Map<T>(C, m, n).noalias() += ConstMap<T>(A, m, k) * ConstMap<T>(B, n, k).transpose();
}

}  // namespace mambapupil::gemm
