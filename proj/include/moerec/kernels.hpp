// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

// Dense numerical kernels shared by the autodiff ops, the gradient-boosting
// stacker and the inference paths. All functions are templated on the Eigen
// expression type and work row-wise on 2-D data.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string_view>
#include <vector>

namespace moerec {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Mat = MatrixX<double>;
using RowVec = RowVectorX<double>;
using Index = Eigen::Index;

/// Row-wise softmax with max subtraction.
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar m = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

/// Row-wise log-softmax. The max term contributes exactly 1 to the partition
/// sum, so the remainder goes through log1p to keep confident rows accurate.
template <typename Derived>
MatrixX<typename Derived::Scalar> log_softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    Index arg = 0;
    const Scalar m = x.row(r).maxCoeff(&arg);
    Scalar rest = 0;
    for (Index c = 0; c < x.cols(); ++c)
      if (c != arg) rest += std::exp(x(r, c) - m);
    out.row(r) = ((x.row(r).array() - m) - std::log1p(rest)).matrix();
  }
  return out;
}

/// Normalizes each row to zero mean and unit (biased) variance.
/// `inv_std`, when non-null, receives 1 / sqrt(var + eps) per row.
template <typename Derived>
MatrixX<typename Derived::Scalar> standardize_rows(const Eigen::MatrixBase<Derived>& x,
                                                   typename Derived::Scalar eps,
                                                   RowVectorX<typename Derived::Scalar>* inv_std = nullptr) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out(x.rows(), x.cols());
  if (inv_std) inv_std->resize(x.rows());
  const auto d = static_cast<Scalar>(x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar mean = x.row(r).sum() / d;
    const auto centered = (x.row(r).array() - mean).eval();
    const Scalar var = centered.square().sum() / d;
    const Scalar inv = Scalar(1) / std::sqrt(var + eps);
    out.row(r) = (centered * inv).matrix();
    if (inv_std) (*inv_std)(r) = inv;
  }
  return out;
}

template <typename Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x / std::sqrt(Scalar(2))));
}

template <typename Scalar>
Scalar gelu_derivative(Scalar x) {
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x / std::sqrt(Scalar(2))));
  const Scalar pdf = std::exp(Scalar(-0.5) * x * x) / std::sqrt(Scalar(2) * Scalar(M_PI));
  return cdf + x * pdf;
}

/// Indices of the k largest entries of a row, largest first. Ties go to the
/// lower index.
template <typename Derived>
std::vector<Index> top_k_indices(const Eigen::MatrixBase<Derived>& row, Index k) {
  std::vector<Index> order(static_cast<std::size_t>(row.size()));
  std::iota(order.begin(), order.end(), Index{0});
  k = std::clamp<Index>(k, 0, row.size());
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](Index a, Index b) {
    const auto va = row(a);
    const auto vb = row(b);
    return va > vb || (va == vb && a < b);
  });
  order.resize(static_cast<std::size_t>(k));
  return order;
}

/// 0/1 mask selecting the top-k entries of every row.
template <typename Derived>
MatrixX<typename Derived::Scalar> top_k_mask(const Eigen::MatrixBase<Derived>& x, Index k) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> mask = MatrixX<Scalar>::Zero(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r)
    for (Index c : top_k_indices(x.row(r), k)) mask(r, c) = Scalar(1);
  return mask;
}

/// FNV-1a, 64-bit: offset basis 0xcbf29ce484222325, prime 0x100000001b3.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace moerec
