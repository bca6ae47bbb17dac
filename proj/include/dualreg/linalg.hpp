#pragma once

#include "errors.hpp"

#include <Eigen/Dense>
#include <string>

namespace dualreg {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

namespace linalg {

//! relative pivot tolerance for numerical rank decisions
inline constexpr double rank_tolerance = 1e-10;

//! Column-pivoted QR with the library-wide rank threshold.
inline Eigen::ColPivHouseholderQR<Matrix> pivoted_qr(const Matrix& a)
{
  Eigen::ColPivHouseholderQR<Matrix> qr(a);
  qr.setThreshold(rank_tolerance);
  return qr;
}

inline bool full_column_rank(const Matrix& a)
{
  if (a.rows() < a.cols())
    return false;
  return pivoted_qr(a).rank() == a.cols();
}

//! Least-squares coefficients of `rhs` (one or more columns) on `a`.
//! Throws DesignRankError when `a` is column-rank deficient.
inline Matrix least_squares(const Matrix& a, const Matrix& rhs)
{
  auto qr = pivoted_qr(a);
  if (qr.rank() != a.cols())
    throw DesignRankError("design matrix is rank deficient (rank " +
                          std::to_string(qr.rank()) + " < " +
                          std::to_string(a.cols()) + ")");
  return qr.solve(rhs);
}

inline Vector least_squares(const Matrix& a, const Vector& rhs)
{
  Matrix b = rhs;
  return least_squares(a, b).col(0);
}

//! Solve a square system, raising SingularJacobianError when it is
//! numerically singular.
inline Vector solve_square(const Matrix& a, const Vector& rhs,
                           const char* what = "Jacobian")
{
  Eigen::FullPivLU<Matrix> lu(a);
  lu.setThreshold(rank_tolerance);
  if (!lu.isInvertible())
    throw SingularJacobianError(std::string(what) + " is singular");
  return lu.solve(rhs);
}

inline Matrix inverse_square(const Matrix& a, const char* what = "Jacobian")
{
  Eigen::FullPivLU<Matrix> lu(a);
  lu.setThreshold(rank_tolerance);
  if (!lu.isInvertible())
    throw SingularJacobianError(std::string(what) + " is singular");
  return lu.inverse();
}

} // namespace linalg
} // namespace dualreg
