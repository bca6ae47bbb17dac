#pragma once

#include "data.hpp"
#include "ecdf.hpp"
#include "errors.hpp"
#include "linalg.hpp"
#include "location_scale.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

namespace dualreg {

enum class InitMethod
{
  ols,
  provided
};

struct SolverOptions
{
  double tol_grad = 1e-10;       //!< on max |gradient| / n
  double tol_constraint = 1e-8;  //!< on the moment report
  int max_iter = 200;
  double boundary_fraction = 0.995;
  InitMethod init = InitMethod::ols;
  Vector lambda1_start; //!< used when init == provided
  Vector lambda2_start;
  //! throw NotConvergedError<Fit> instead of returning an unconverged fit
  bool throw_on_max_iter = true;
  //! initial log-barrier weight relative to the starting scale
  double barrier_start = 0.1;
  //! called with (lambda1, lambda2) at the start and after every accepted step
  std::function<void(const Vector&, const Vector&)> on_iterate;

  void validate() const
  {
    if (!(tol_grad > 0.0) || !(tol_constraint > 0.0))
      throw DomainError("solver tolerances must be positive");
    if (!(boundary_fraction > 0.0 && boundary_fraction < 1.0))
      throw DomainError("boundary_fraction must lie in (0, 1)");
    if (max_iter < 1)
      throw DomainError("max_iter must be positive");
    if (!(barrier_start >= 0.0))
      throw DomainError("barrier_start must be non-negative");
  }
};

//! Scaled residuals of the estimating equations:
//! g1 = X'e / n, g2 = X'(e^2 - 1) / (2n).
struct MomentReport
{
  Vector g1;
  Vector g2;
  double max_abs = 0.0;
};

struct CovarianceEstimate
{
  Matrix vcov; //!< 2k x 2k for the stacked (lambda1, lambda2)
  Vector se;
};

//! Sum over observations of 1/2 [((y - lambda1.x) / (lambda2.x))^2 + 1]
//! (lambda2.x). Equals y'e at the optimum.
inline double primal_objective(const Vector& lambda1, const Vector& lambda2,
                               const Vector& y, const DesignMatrix& design)
{
  const Vector s = scale_index(design, lambda2);
  const Vector r = y - design.values * lambda1;
  return 0.5 * (r.array().square() / s.array() + s.array()).sum();
}

//! Gradient with respect to (lambda1, lambda2): (-X'e, -1/2 X'(e^2 - 1)).
inline Vector primal_gradient(const Vector& lambda1, const Vector& lambda2,
                              const Vector& y, const DesignMatrix& design)
{
  const Vector e = residual_from_multipliers(y, design, lambda1, lambda2);
  const auto k = design.cols();
  Vector g(2 * k);
  g.head(k) = -design.values.transpose() * e;
  g.tail(k) =
    -0.5 * design.values.transpose() * (e.array().square() - 1.0).matrix();
  return g;
}

namespace detail {

//! Hessian of the primal: sum_i (1/s_i) v_i v_i' with v_i = (x_i, e_i x_i).
inline Matrix primal_hessian(const DesignMatrix& design, const Vector& e,
                             const Vector& s)
{
  const auto n = design.rows();
  const auto k = design.cols();
  Matrix w(n, 2 * k);
  const Vector inv_root = s.array().rsqrt();
  w.leftCols(k) = inv_root.asDiagonal() * design.values;
  w.rightCols(k) =
    (inv_root.array() * e.array()).matrix().asDiagonal() * design.values;
  return w.transpose() * w;
}

//! Largest step in (0, 1] keeping every s_i + t ds_i above
//! (1 - fraction) s_i.
inline double fraction_to_boundary(const Vector& s, const Vector& ds,
                                   double fraction)
{
  double step = 1.0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (ds(i) < 0.0)
      step = std::min(step, fraction * s(i) / -ds(i));
  return step;
}

//! Solve (H + mu I) d = rhs, increasing mu until the factorization is
//! positive definite.
inline Vector regularized_newton_step(const Matrix& h, const Vector& rhs)
{
  Eigen::LLT<Matrix> llt(h);
  if (llt.info() == Eigen::Success) {
    Vector d = llt.solve(rhs);
    if (d.allFinite())
      return d;
  }
  const double scale = std::max(h.norm(), 1e-300);
  double mu = 1e-8 * scale;
  const Matrix eye = Matrix::Identity(h.rows(), h.cols());
  for (int attempt = 0; attempt < 40; ++attempt, mu *= 10.0) {
    Eigen::LLT<Matrix> reg(h + mu * eye);
    if (reg.info() == Eigen::Success)
      return reg.solve(rhs);
  }
  throw SingularJacobianError("Newton system could not be regularized");
}

inline double max_scaled(const Vector& g, double n)
{
  return g.size() ? g.cwiseAbs().maxCoeff() / n : 0.0;
}

} // namespace detail

inline MomentReport moment_report(const DualFit& fit,
                                  const DesignMatrix& design)
{
  const double n = static_cast<double>(design.rows());
  MomentReport m;
  m.g1 = design.values.transpose() * fit.e / n;
  m.g2 = design.values.transpose() * (fit.e.array().square() - 1.0).matrix() /
         (2.0 * n);
  m.max_abs = std::max(m.g1.cwiseAbs().maxCoeff(), m.g2.cwiseAbs().maxCoeff());
  return m;
}

//! |y'e - primal| / max(1, |y'e|)
inline double duality_gap(const DualFit& fit, const Vector& y)
{
  const double dual = y.dot(fit.e);
  return std::abs(dual - fit.objective_primal) /
         std::max(1.0, std::abs(dual));
}

//! Starting values: lambda1 by least squares, lambda2 = (sd of residuals,
//! 0, ..., 0).
inline std::pair<Vector, Vector> ols_start(const Vector& y,
                                           const DesignMatrix& design)
{
  if (!design.has_intercept)
    throw InitializationError("OLS start needs an intercept column");
  Vector lambda1 = linalg::least_squares(design.values, y);
  const Vector r = y - design.values * lambda1;
  const double sd = std::sqrt(r.squaredNorm() / static_cast<double>(r.size()));
  const double y_scale = std::max(1.0, y.cwiseAbs().maxCoeff());
  if (!(sd > 1e-14 * y_scale))
    throw InitializationError("least-squares residual scale is zero");
  Vector lambda2 = Vector::Zero(design.cols());
  lambda2(0) = sd;
  return { std::move(lambda1), std::move(lambda2) };
}

//! Minimize the primal criterion by damped Newton with a fraction-to-boundary
//! safeguard on lambda2 . x_i > 0. The returned fit carries residuals, ranks
//! and both objective values.
inline DualFit fit_dual(const Vector& y, const DesignMatrix& design,
                        const SolverOptions& options = {})
{
  options.validate();
  const auto n = design.rows();
  const auto k = design.cols();
  if (y.size() != n)
    throw DataError("outcome length differs from design rows");
  if (n < 2 * k)
    throw DataError("need n >= 2k observations");
  if (!linalg::full_column_rank(design.values))
    throw DesignRankError("design matrix is rank deficient");

  Vector lambda1, lambda2;
  if (options.init == InitMethod::provided) {
    if (options.lambda1_start.size() != k || options.lambda2_start.size() != k)
      throw InitializationError("provided start has the wrong dimension");
    lambda1 = options.lambda1_start;
    lambda2 = options.lambda2_start;
    scale_index(design, lambda2);
  } else {
    std::tie(lambda1, lambda2) = ols_start(y, design);
  }

  const double dn = static_cast<double>(n);
  const auto& X = design.values;
  const Vector column_scale =
    X.cwiseAbs().colwise().maxCoeff().transpose().cwiseMax(1.0);

  // Log-barrier continuation keeps the iterates off the boundary
  // lambda2 . x_i = 0, where plain damped Newton can jam; once the weight
  // reaches zero the iteration is pure Newton on the primal.
  const double s_ref = (X * lambda2).mean();
  double weight = options.barrier_start;
  auto mu = [&] { return weight * s_ref; };
  auto next_weight = [&] {
    weight = weight * 0.1 < 1e-10 ? 0.0 : weight * 0.1;
  };

  struct State
  {
    Vector l1, l2, s, e, g, gb;
    double f = 0.0, phi = 0.0;
  };
  auto evaluate = [&](const Vector& l1, const Vector& l2, double m,
                      State& out) {
    out.s = X * l2;
    if (!(out.s.array() > 0.0).all())
      return false;
    out.l1 = l1;
    out.l2 = l2;
    out.e = (y - X * l1).array() / out.s.array();
    out.f = 0.5 * (out.e.array().square() * out.s.array() + out.s.array()).sum();
    out.g.resize(2 * k);
    out.g.head(k) = -X.transpose() * out.e;
    out.g.tail(k) =
      -0.5 * X.transpose() * (out.e.array().square() - 1.0).matrix();
    out.gb = out.g;
    out.phi = out.f;
    if (m > 0.0) {
      out.gb.tail(k) -= m * X.transpose() * out.s.cwiseInverse();
      out.phi -= m * out.s.array().log().sum();
    }
    return std::isfinite(out.phi);
  };
  auto column_scaled = [&](const Vector& grad) {
    double worst = 0.0;
    for (Eigen::Index j = 0; j < 2 * k; ++j)
      worst = std::max(worst, std::abs(grad(j)) / column_scale(j % k));
    return worst / dn;
  };

  State cur;
  if (!evaluate(lambda1, lambda2, mu(), cur))
    throw InitializationError("starting point is not feasible");
  if (options.on_iterate)
    options.on_iterate(cur.l1, cur.l2);

  bool converged = false;
  bool polished = false;
  int steps = 0;
  for (int pass = 0; pass < options.max_iter; ++pass) {
    while (weight > 0.0 && column_scaled(cur.gb) <= 10.0 * weight) {
      next_weight();
      evaluate(cur.l1, cur.l2, mu(), cur);
    }
    const double gmax = detail::max_scaled(cur.g, dn);
    const bool within = weight == 0.0 && gmax <= options.tol_grad;
    if (within && polished) {
      converged = true;
      break;
    }
    Matrix h = detail::primal_hessian(design, cur.e, cur.s);
    if (weight > 0.0)
      h.bottomRightCorner(k, k) +=
        mu() * X.transpose() * cur.s.array().square().inverse().matrix()
                                 .asDiagonal() * X;
    const Vector d = detail::regularized_newton_step(h, -cur.gb);
    const Vector ds = X * d.tail(k);
    const double max_step =
      detail::fraction_to_boundary(cur.s, ds, options.boundary_fraction);
    const double slope = cur.gb.dot(d);
    // once the predicted decrease is below rounding in the merit value,
    // comparisons are meaningless and progress is judged on the gradient
    const bool local =
      within || -slope <= 1e-12 * std::max(1.0, std::abs(cur.phi));

    State next;
    bool accepted = false;
    if (!local) {
      double step = max_step;
      for (int bt = 0; bt < 60 && !accepted; ++bt, step *= 0.5)
        accepted = evaluate(cur.l1 + step * d.head(k),
                            cur.l2 + step * d.tail(k), mu(), next) &&
                   next.phi < cur.phi &&
                   next.phi <= cur.phi + 1e-4 * step * slope;
    }
    if (!accepted)
      accepted = evaluate(cur.l1 + max_step * d.head(k),
                          cur.l2 + max_step * d.tail(k), mu(), next) &&
                 detail::max_scaled(next.gb, dn) <
                   detail::max_scaled(cur.gb, dn);
    if (!accepted) {
      if (weight > 0.0) {
        next_weight();
        evaluate(cur.l1, cur.l2, mu(), cur);
        continue;
      }
      converged = within;
      break;
    }
    polished = within;
    cur = std::move(next);
    ++steps;
    if (options.on_iterate)
      options.on_iterate(cur.l1, cur.l2);
  }
  if (!converged && weight == 0.0 &&
      detail::max_scaled(cur.g, dn) <= options.tol_constraint)
    converged = true;
  lambda1 = cur.l1;
  lambda2 = cur.l2;
  const int iter = steps;
  const double f = cur.f;
  Vector e = cur.e;

  DualFit fit;
  fit.lambda1 = std::move(lambda1);
  fit.lambda2 = std::move(lambda2);
  fit.e = std::move(e);
  fit.u = ecdf_transform(fit.e).second;
  fit.objective_dual = y.dot(fit.e);
  fit.objective_primal = f;
  fit.converged = converged;
  fit.iterations = iter;
  if (!converged && options.throw_on_max_iter)
    throw NotConvergedError<DualFit>(
      "dual regression did not converge in " + std::to_string(iter) +
        " iterations",
      fit);
  return fit;
}

//! Sandwich covariance G^{-1} Omega G^{-T} / n of the stacked multipliers,
//! with G the Jacobian of the per-observation moment functions
//! (x_i e_i, x_i (e_i^2 - 1) / 2) and Omega their outer product.
inline CovarianceEstimate covariance(const DualFit& fit, const Vector& y,
                                     const DesignMatrix& design)
{
  const auto n = design.rows();
  const auto k = design.cols();
  const double dn = static_cast<double>(n);
  const Vector s = design.values * fit.lambda2;
  const Vector e = (y - design.values * fit.lambda1).array() / s.array();

  const Matrix jac = -detail::primal_hessian(design, e, s) / dn;
  Matrix psi(n, 2 * k);
  psi.leftCols(k) = e.asDiagonal() * design.values;
  psi.rightCols(k) =
    (0.5 * (e.array().square() - 1.0)).matrix().asDiagonal() * design.values;
  const Matrix omega = psi.transpose() * psi / dn;

  const Matrix jinv = linalg::inverse_square(jac, "moment Jacobian");
  Matrix v = jinv * omega * jinv.transpose() / dn;
  v = 0.5 * (v + v.transpose()).eval();

  CovarianceEstimate out;
  out.se = v.diagonal().cwiseMax(0.0).cwiseSqrt();
  out.vcov = std::move(v);
  return out;
}

} // namespace dualreg
