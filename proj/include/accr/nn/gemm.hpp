#pragma once

#include <cstddef>
#include <type_traits>

#include <Eigen/Core>

namespace accr::nn {

/// C(m×n) = op(A)·op(B) (+ C when accumulate). All operands row-major;
/// op(A) is m×k, stored k×m when trans_a.
template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate) {
  if constexpr (std::is_floating_point_v<T>) {
    using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k);
    Eigen::Map<const RowMat> A(a, trans_a ? K : M, trans_a ? M : K);
    Eigen::Map<const RowMat> B(b, trans_b ? N : K, trans_b ? K : N);
    Eigen::Map<RowMat> C(c, M, N);
    auto run = [&](const auto& lhs, const auto& rhs) {
      if (accumulate)
        C.noalias() += lhs * rhs;
      else
        C.noalias() = lhs * rhs;
    };
    if (!trans_a && !trans_b) run(A, B);
    else if (trans_a && !trans_b) run(A.transpose(), B);
    else if (!trans_a && trans_b) run(A, B.transpose());
    else run(A.transpose(), B.transpose());
  } else {
    if (!accumulate)
      for (std::size_t i = 0; i < m * n; ++i) c[i] = T(0);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const T aip = trans_a ? a[p * m + i] : a[i * k + p];
        T* crow = c + i * n;
        if (!trans_b) {
          const T* brow = b + p * n;
          for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        } else {
          for (std::size_t j = 0; j < n; ++j) crow[j] += aip * b[j * k + p];
        }
      }
    }
  }
}

}  // namespace accr::nn
