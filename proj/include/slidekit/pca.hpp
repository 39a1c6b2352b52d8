#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>

#include "slidekit/image.hpp"
#include "slidekit/retrieval.hpp"

namespace slidekit {

template <typename Scalar>
struct PcaResult {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> components;  // n x D, orthonormal rows
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> eigenvalues;              // non-increasing, >= 0

  // Scores of each row of x on every component (N x n).
  template <typename Derived>
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> project(const Eigen::MatrixBase<Derived>& x) const {
    return x.template cast<Scalar>() * components.transpose();
  }
};

// Subtracts from every row the mean of all rows that share its grid position.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> positional_mean_subtract(
    std::span<const TileCoord> positions, const Eigen::MatrixBase<Derived>& vectors) {
  using Scalar = typename Derived::Scalar;
  using Row = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  if (static_cast<Eigen::Index>(positions.size()) != vectors.rows()) {
    throw std::invalid_argument("positional_mean_subtract: position count differs from row count");
  }
  std::map<TileCoord, std::pair<Row, Eigen::Index>> sums;
  for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
    auto [it, fresh] = sums.try_emplace(positions[static_cast<std::size_t>(i)], Row::Zero(vectors.cols()), 0);
    it->second.first += vectors.row(i);
    ++it->second.second;
  }
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out = vectors;
  for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
    const auto& [sum, count] = sums.at(positions[static_cast<std::size_t>(i)]);
    out.row(i) -= sum / static_cast<Scalar>(count);
  }
  return out;
}

namespace detail {

// Each component's largest-magnitude coordinate made positive.
template <typename Matrix>
void fix_signs(Matrix& components) {
  for (Eigen::Index r = 0; r < components.rows(); ++r) {
    Eigen::Index arg = 0;
    components.row(r).cwiseAbs().maxCoeff(&arg);
    if (components(r, arg) < 0) components.row(r) *= -1;
  }
}

}  // namespace detail

inline constexpr int kDenseEigenLimit = 512;

// PCA of already-centered data. Covariance uses the N-1 denominator.
// D <= 512: dense symmetric eigendecomposition of the covariance. Larger D:
// power iteration with deflation (tol 1e-9, at most 1000 iterations each).
template <typename Derived>
PcaResult<typename Derived::Scalar> pca_fit(const Eigen::MatrixBase<Derived>& x, int n_components) {
  using Scalar = typename Derived::Scalar;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const Eigen::Index n = x.rows(), d = x.cols();
  if (n < 2) throw std::invalid_argument("pca_fit: need at least 2 rows");
  if (n_components < 1 || n_components > std::min(n, d)) {
    throw std::invalid_argument("pca_fit: n_components must be in [1, min(N, D)]");
  }
  const Matrix cov = (x.transpose() * x) / static_cast<Scalar>(n - 1);

  PcaResult<Scalar> out;
  out.components.resize(n_components, d);
  out.eigenvalues.resize(n_components);
  if (d <= kDenseEigenLimit) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(cov);
    if (solver.info() != Eigen::Success) throw std::runtime_error("pca_fit: eigendecomposition failed");
    for (int c = 0; c < n_components; ++c) {
      const Eigen::Index src = d - 1 - c;  // ascending order from the solver
      out.eigenvalues[c] = std::max(solver.eigenvalues()[src], Scalar(0));
      out.components.row(c) = solver.eigenvectors().col(src).transpose();
    }
  } else {
    Matrix work = cov;
    for (int c = 0; c < n_components; ++c) {
      Vector v = Vector::Ones(d) / std::sqrt(static_cast<Scalar>(d));
      Scalar lambda = 0;
      for (int it = 0; it < 1000; ++it) {
        Vector w = work * v;
        const Scalar norm = w.norm();
        if (!(norm > 0)) break;
        w /= norm;
        const Scalar diff = std::min((w - v).norm(), (w + v).norm());
        v = w;
        lambda = norm;
        if (diff < Scalar(1e-9)) break;
      }
      lambda = v.dot(work * v);
      out.eigenvalues[c] = std::max(lambda, Scalar(0));
      out.components.row(c) = v.transpose();
      work -= lambda * v * v.transpose();
    }
  }
  detail::fix_signs(out.components);
  return out;
}

// Grid of scores to an 8-bit image, one pixel per cell. NaN cells are
// missing: rendered 0 and excluded from the min-max range. With positive_only,
// negative scores become 0 first. A constant grid renders all zeros.
GrayImage component_heatmap(const Eigen::MatrixXd& scores, bool positive_only = true);

// Places per-tile values onto a row-major grid of tile_size cells (NaN where
// there is no tile).
Eigen::MatrixXd scores_to_grid(std::span<const TileCoord> coords, std::span<const double> values, int tile_size);

}  // namespace slidekit
