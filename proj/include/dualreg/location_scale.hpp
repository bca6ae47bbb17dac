#pragma once

#include "data.hpp"
#include "ecdf.hpp"
#include "errors.hpp"
#include "linalg.hpp"

#include <span>

namespace dualreg {

//! Solution of the J = 2 dual regression problem: location multipliers
//! lambda1, scale multipliers lambda2, the residual assignment e and its
//! ranks u.
struct DualFit
{
  Vector lambda1;
  Vector lambda2;
  Vector e;
  Vector u;
  double objective_dual = 0.0;   //!< y' e
  double objective_primal = 0.0; //!< sum form of the M-estimation criterion
  bool converged = false;
  int iterations = 0;
};

//! lambda2 . x_i for every row; throws ScaleNotPositiveError at the first
//! non-positive entry.
inline Vector scale_index(const DesignMatrix& design, const Vector& lambda2)
{
  Vector s = design.values * lambda2;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (!(s(i) > 0.0))
      throw ScaleNotPositiveError(static_cast<std::size_t>(i + 1));
  return s;
}

//! e_i = (y_i - lambda1 . x_i) / (lambda2 . x_i)
inline Vector residual_from_multipliers(const Vector& y,
                                        const DesignMatrix& design,
                                        const Vector& lambda1,
                                        const Vector& lambda2)
{
  const Vector s = scale_index(design, lambda2);
  return ((y - design.values * lambda1).array() / s.array()).matrix();
}

//! y_i = lambda1 . x_i + (lambda2 . x_i) e_i
inline Vector reconstruct_y(const DesignMatrix& design, const Vector& lambda1,
                            const Vector& lambda2, const Vector& e)
{
  return design.values * lambda1 +
         ((design.values * lambda2).array() * e.array()).matrix();
}

//! Rows beta(u) = lambda1 + lambda2 F_n^{-1}(u) for each u in the grid,
//! F_n the ECDF of the fitted residuals. Throws DomainError for u outside
//! (0, 1).
inline Matrix quantile_coefficients(const DualFit& fit,
                                    std::span<const double> u_grid)
{
  const auto ecdf = ecdf_transform(fit.e).first;
  Matrix beta(static_cast<Eigen::Index>(u_grid.size()), fit.lambda1.size());
  for (std::size_t r = 0; r < u_grid.size(); ++r) {
    const double q = ecdf.quantile(u_grid[r]);
    beta.row(static_cast<Eigen::Index>(r)) =
      (fit.lambda1 + fit.lambda2 * q).transpose();
  }
  return beta;
}

//! The nine deciles used for level sets and no-crossing checks.
inline std::vector<double> decile_grid()
{
  return { 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9 };
}

} // namespace dualreg
