#pragma once

// Small dense symmetric helpers on top of Eigen.

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

namespace pvq::linalg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Relative eigenvalue cutoff for pseudo-inverses.
inline constexpr double kPinvTolerance = 1e-10;

/// Solves A x = b for symmetric PSD A with the eigenvalue-thresholded
/// pseudo-inverse (eigenvalues below tol * lambda_max are dropped).
inline Vector pinv_solve(const Matrix& a, const Vector& b, double tol = kPinvTolerance) {
  if (a.rows() == 0) return Vector();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(a);
  const Vector& lambda = eig.eigenvalues();
  const double cutoff = tol * std::max(0.0, lambda.maxCoeff());
  const Vector coeff = eig.eigenvectors().transpose() * b;
  Vector scaled = Vector::Zero(a.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if (lambda(i) > cutoff && lambda(i) > 0.0) scaled(i) = coeff(i) / lambda(i);
  }
  return eig.eigenvectors() * scaled;
}

inline double min_eigenvalue(const Matrix& a) {
  if (a.rows() == 0) return 0.0;
  return Eigen::SelfAdjointEigenSolver<Matrix>(a, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

/// Largest absolute eigenvalue of a symmetric matrix.
inline double spectral_norm(const Matrix& a) {
  if (a.rows() == 0) return 0.0;
  const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(a, Eigen::EigenvaluesOnly).eigenvalues();
  return std::max(std::abs(ev.minCoeff()), std::abs(ev.maxCoeff()));
}

inline Matrix submatrix(const Matrix& a, const std::vector<int>& idx) {
  const auto k = static_cast<Eigen::Index>(idx.size());
  Matrix out(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j) out(i, j) = a(idx[i], idx[j]);
  return out;
}

inline Vector subvector(const Vector& v, const std::vector<int>& idx) {
  Vector out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(idx[i]);
  return out;
}

inline Matrix columns(const Matrix& a, const std::vector<int>& idx) {
  Matrix out(a.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = a.col(idx[i]);
  return out;
}

}  // namespace pvq::linalg
