#pragma once

// Dense primitives shared by every module. All functions are pure and accept
// any Eigen dense expression; results are row-major matrices of the input
// scalar type.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "mesh/errors.hpp"

namespace mesh {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using ColVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = RowMatrix<double>;
using Vector = ColVector<double>;

namespace linalg {

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.derived().array().isFinite().all();
}

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* where) {
  if (!all_finite(m)) throw DegenerateInputError(std::string(where) + ": non-finite entry");
}

/// Matrix product with a fixed summation order: every output entry is the
/// left-to-right sum over the inner dimension. Results are reproducible
/// bit for bit against a naive triple loop.
template <typename DerivedA, typename DerivedB>
RowMatrix<typename DerivedA::Scalar> matmul(const Eigen::MatrixBase<DerivedA>& a,
                                            const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_str(a.rows(), a.cols()) + " times " +
                     shape_str(b.rows(), b.cols()));
  }
  const RowMatrix<Scalar> lhs = a;
  const RowMatrix<Scalar> rhs = b;
  RowMatrix<Scalar> out(lhs.rows(), rhs.cols());
  for (Eigen::Index i = 0; i < lhs.rows(); ++i) {
    for (Eigen::Index j = 0; j < rhs.cols(); ++j) {
      Scalar acc{0};
      for (Eigen::Index k = 0; k < lhs.cols(); ++k) acc += lhs(i, k) * rhs(k, j);
      out(i, j) = acc;
    }
  }
  return out;
}

/// Row-wise softmax with per-row max subtraction.
template <typename Derived>
RowMatrix<typename Derived::Scalar> row_softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  RowMatrix<Scalar> out = logits;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    const Scalar shift = row.maxCoeff();
    row = (row.array() - shift).exp();
    row /= row.sum();
  }
  return out;
}

/// Per-row argmax; ties go to the lowest column index.
template <typename Derived>
std::vector<int> row_argmax(const Eigen::MatrixBase<Derived>& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()), 0);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < m.cols(); ++j) {
      if (m(i, j) > m(i, best)) best = j;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

/// n x n cosine similarities between the rows of x. The result is exactly
/// symmetric with a unit diagonal and entries clamped to [-1, 1].
template <typename Derived>
RowMatrix<typename Derived::Scalar> cosine_similarity_matrix(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = x.rows();
  RowMatrix<Scalar> unit = x;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar norm = unit.row(i).norm();
    if (!(norm > Scalar(1e-12))) {
      throw DegenerateInputError("cosine_similarity_matrix: row " + std::to_string(i) +
                                 " has zero norm");
    }
    unit.row(i) /= norm;
  }
  RowMatrix<Scalar> sim(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    sim(i, i) = Scalar(1);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const Scalar c = std::clamp(unit.row(i).dot(unit.row(j)), Scalar(-1), Scalar(1));
      sim(i, j) = c;
      sim(j, i) = c;
    }
  }
  return sim;
}

/// Keeps the k largest entries of every row and zeroes the rest. Ties are
/// resolved in favour of the lower column index.
template <typename Derived>
RowMatrix<typename Derived::Scalar> topk_sparsify_rows(const Eigen::MatrixBase<Derived>& w,
                                                       Eigen::Index k) {
  using Scalar = typename Derived::Scalar;
  if (k < 1 || k >= w.cols()) {
    throw ParameterError("topk_sparsify_rows: k=" + std::to_string(k) + " outside [1, " +
                         std::to_string(w.cols() - 1) + "]");
  }
  RowMatrix<Scalar> out = RowMatrix<Scalar>::Zero(w.rows(), w.cols());
  std::vector<Eigen::Index> order(static_cast<std::size_t>(w.cols()));
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::partial_sort(order.begin(), order.begin() + k, order.end(),
                      [&](Eigen::Index l, Eigen::Index r) {
                        if (w(i, l) != w(i, r)) return w(i, l) > w(i, r);
                        return l < r;
                      });
    for (Eigen::Index t = 0; t < k; ++t) {
      const Eigen::Index j = order[static_cast<std::size_t>(t)];
      out(i, j) = w(i, j);
    }
  }
  return out;
}

/// D^{-1/2} W D^{-1/2} with D the diagonal of row sums. Zero-degree rows and
/// columns stay zero.
template <typename Derived>
RowMatrix<typename Derived::Scalar> symmetric_normalize(const Eigen::MatrixBase<Derived>& w) {
  using Scalar = typename Derived::Scalar;
  if (w.rows() != w.cols()) {
    throw ShapeError("symmetric_normalize: non-square " + shape_str(w.rows(), w.cols()));
  }
  if ((w.derived().array() < Scalar(0)).any()) {
    throw ParameterError("symmetric_normalize: negative entry");
  }
  const Eigen::Index n = w.rows();
  ColVector<Scalar> inv_sqrt(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar degree = w.row(i).sum();
    inv_sqrt(i) = degree > Scalar(0) ? Scalar(1) / std::sqrt(degree) : Scalar(0);
  }
  RowMatrix<Scalar> out(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) out(i, j) = inv_sqrt(i) * w(i, j) * inv_sqrt(j);
  }
  return out;
}

/// Solves a X = b by Gaussian elimination with partial pivoting.
/// Throws SingularMatrixError when a pivot falls below 1e-12 in magnitude.
template <typename DerivedA, typename DerivedB>
RowMatrix<typename DerivedA::Scalar> solve_linear(const Eigen::MatrixBase<DerivedA>& a,
                                                  const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  using std::abs;
  if (a.rows() != a.cols()) {
    throw ShapeError("solve_linear: non-square " + shape_str(a.rows(), a.cols()));
  }
  if (b.rows() != a.rows()) {
    throw ShapeError("solve_linear: rhs " + shape_str(b.rows(), b.cols()) + " for " +
                     shape_str(a.rows(), a.cols()));
  }
  const Eigen::Index n = a.rows();
  RowMatrix<Scalar> lu = a;
  RowMatrix<Scalar> x = b;

  for (Eigen::Index col = 0; col < n; ++col) {
    Eigen::Index pivot = col;
    for (Eigen::Index r = col + 1; r < n; ++r) {
      if (abs(lu(r, col)) > abs(lu(pivot, col))) pivot = r;
    }
    if (!(abs(lu(pivot, col)) >= Scalar(1e-12))) {
      throw SingularMatrixError("solve_linear: pivot below 1e-12 in column " +
                                std::to_string(col));
    }
    if (pivot != col) {
      lu.row(pivot).swap(lu.row(col));
      x.row(pivot).swap(x.row(col));
    }
    const Scalar diag = lu(col, col);
    for (Eigen::Index r = col + 1; r < n; ++r) {
      const Scalar factor = lu(r, col) / diag;
      if (factor == Scalar(0)) continue;
      lu(r, col) = Scalar(0);
      for (Eigen::Index c = col + 1; c < n; ++c) lu(r, c) -= factor * lu(col, c);
      x.row(r) -= factor * x.row(col);
    }
  }

  for (Eigen::Index row = n - 1; row >= 0; --row) {
    for (Eigen::Index c = row + 1; c < n; ++c) x.row(row) -= lu(row, c) * x.row(c);
    x.row(row) /= lu(row, row);
  }
  require_finite(x, "solve_linear");
  return x;
}

}  // namespace linalg
}  // namespace mesh
