#pragma once

#include "data.hpp"
#include "ecdf.hpp"
#include "errors.hpp"
#include "gdr.hpp"
#include "linalg.hpp"
#include "solver.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace dualreg {

//! Least-squares projection of [1 | X] on [1 | Z].
struct FirstStage
{
  Matrix coefficients; //!< m x k
  Matrix fitted;       //!< n x k, first column is the intercept
};

inline FirstStage first_stage(const Dataset& data)
{
  const DesignMatrix z = build_design(data, false, true);
  const DesignMatrix x = make_design(data.x, false);
  FirstStage fs;
  fs.coefficients = linalg::least_squares(z.values, x.values);
  fs.fitted = z.values * fs.coefficients;
  fs.fitted.col(0).setOnes();
  return fs;
}

//! (X' P_Z X)^{-1} X' P_Z y.
inline Vector two_stage_least_squares(const Vector& y, const Dataset& data)
{
  if (!data.z)
    throw DataError("two-stage least squares needs instruments");
  if (data.m() < data.k())
    throw NotJustIdentifiedError("under-identified: fewer instruments (" +
                                 std::to_string(data.m()) +
                                 ") than regressors (" +
                                 std::to_string(data.k()) + ")");
  const FirstStage fs = first_stage(data);
  const Matrix x = make_design(data.x, false).values;
  const Matrix a = fs.fitted.transpose() * x;
  Eigen::FullPivLU<Matrix> lu(a);
  lu.setThreshold(linalg::rank_tolerance);
  if (!lu.isInvertible())
    throw DesignRankError("projected regressors are rank deficient");
  return lu.solve(fs.fitted.transpose() * y);
}

//! Conventional homoskedastic standard errors of the 2SLS coefficients;
//! large values flag weak instruments.
inline Vector two_stage_least_squares_se(const Vector& y, const Dataset& data)
{
  const Vector b = two_stage_least_squares(y, data);
  const FirstStage fs = first_stage(data);
  const Matrix x = make_design(data.x, false).values;
  const Vector r = y - x * b;
  const double sigma2 = r.squaredNorm() / static_cast<double>(y.size());
  const Matrix v =
    sigma2 * linalg::inverse_square(fs.fitted.transpose() * fs.fitted,
                                    "projected cross-product");
  return v.diagonal().cwiseMax(0.0).cwiseSqrt();
}

enum class IvMethod
{
  direct,
  indirect
};

inline const char* to_string(IvMethod m)
{
  return m == IvMethod::direct ? "direct" : "indirect";
}

struct IvOptions
{
  double tol_grad = 1e-10;
  double tol_constraint = 1e-8;
  int max_iter = 200;
  double boundary_fraction = 0.995;
  bool throw_on_max_iter = true;
  //! indirect method: fix all slopes of terms j >= 2 at zero (homoskedastic
  //! structural form); with J = 2 this reproduces 2SLS
  bool pin_higher_slopes = false;

  void validate() const
  {
    if (!(tol_grad > 0.0) || !(tol_constraint > 0.0))
      throw DomainError("solver tolerances must be positive");
    if (!(boundary_fraction > 0.0 && boundary_fraction < 1.0))
      throw DomainError("boundary_fraction must lie in (0, 1)");
    if (max_iter < 1)
      throw DomainError("max_iter must be positive");
  }
};

struct IvFit
{
  Vector beta1; //!< location, raw regressors
  Vector beta2; //!< scale, raw regressors
  Matrix higher; //!< (J-2) x (k-1) slopes of further terms, centered regressors
  Vector column_means;
  Vector lambda1; //!< direct method only
  Vector lambda2;
  Matrix first_stage; //!< indirect method only
  Vector e;
  Vector u;
  IvMethod method = IvMethod::direct;
  double max_moment = 0.0;
  bool converged = false;
  int iterations = 0;
};

namespace detail {

//! Square system (W_j' h_tilde_j(e))_j / n = 0 in the coefficients of the
//! representation y = sum_j beta_j(x) h_j(e). Rows and parameters follow
//! the same layout: intercept for j <= 2, slopes where free[j].
struct RepresentationSystem
{
  const Vector& y;
  const Matrix& w;
  const Matrix& x;
  const BasisSpec& basis;
  std::vector<bool> free;

  Eigen::Index k() const { return x.cols(); }
  Eigen::Index J() const { return basis.J(); }

  Eigen::Index size() const
  {
    Eigen::Index p = 0;
    for (Eigen::Index j = 0; j < J(); ++j)
      p += (j < 2 ? 1 : 0) + (free[static_cast<std::size_t>(j)] ? k() - 1 : 0);
    return p;
  }

  template<class F>
  void for_each_slot(F&& f) const
  {
    Eigen::Index pos = 0;
    for (Eigen::Index j = 0; j < J(); ++j) {
      if (j < 2)
        f(pos++, j, Eigen::Index{ 0 });
      if (free[static_cast<std::size_t>(j)])
        for (Eigen::Index c = 1; c < k(); ++c)
          f(pos++, j, c);
    }
  }

  Vector pack(const Matrix& b) const
  {
    Vector theta(size());
    for_each_slot([&](Eigen::Index p, Eigen::Index j, Eigen::Index c) {
      theta(p) = b(j, c);
    });
    return theta;
  }

  Matrix unpack(const Vector& theta) const
  {
    Matrix b = Matrix::Zero(J(), k());
    for_each_slot([&](Eigen::Index p, Eigen::Index j, Eigen::Index c) {
      b(j, c) = theta(p);
    });
    return b;
  }

  Vector moments(const Vector& e) const
  {
    Vector m(size());
    Matrix ht(e.size(), J());
    for (Eigen::Index j = 0; j < J(); ++j)
      for (Eigen::Index i = 0; i < e.size(); ++i)
        ht(i, j) = basis.terms[static_cast<std::size_t>(j)].h_tilde(e(i));
    const Matrix all = w.transpose() * ht; // k x J
    for_each_slot([&](Eigen::Index p, Eigen::Index j, Eigen::Index c) {
      m(p) = all(c, j);
    });
    return m / static_cast<double>(e.size());
  }

  Matrix jacobian(const Matrix& b, const Vector& e) const
  {
    const auto n = e.size();
    const auto p = size();
    const Matrix c = x * b.transpose();
    Matrix a(n, p), v(n, p);
    for (Eigen::Index i = 0; i < n; ++i) {
      double slope = 0.0;
      for (Eigen::Index j = 0; j < J(); ++j)
        slope += c(i, j) * basis.terms[static_cast<std::size_t>(j)].h_prime(e(i));
      for_each_slot([&](Eigen::Index q, Eigen::Index j, Eigen::Index col) {
        const double hj = basis.terms[static_cast<std::size_t>(j)].h(e(i));
        a(i, q) = w(i, col) * hj;
        v(i, q) = x(i, col) * hj / slope;
      });
    }
    return -a.transpose() * v / static_cast<double>(n);
  }
};

struct RepresentationSolution
{
  Matrix b;
  Vector e;
  Vector m;
  bool converged = false;
  int iterations = 0;
};

//! Damped Newton on the system with merit |M|^2 / 2. With the canonical
//! basis the step is capped so that the scale index stays positive.
inline RepresentationSolution solve_representation(
  const RepresentationSystem& sys, const Matrix& start, const IvOptions& opt)
{
  const bool canonical = sys.J() == 2;
  struct State
  {
    Vector theta, e, m;
    double merit = 0.0;
  };
  auto evaluate = [&](const Vector& theta, State& out) {
    const Matrix b = sys.unpack(theta);
    try {
      out.e = detail::invert_all(sys.y, sys.x, b, sys.basis);
    } catch (const NonMonotoneMapError&) {
      return false;
    } catch (const BracketError&) {
      return false;
    }
    out.theta = theta;
    out.m = sys.moments(out.e);
    out.merit = 0.5 * out.m.squaredNorm();
    return std::isfinite(out.merit);
  };

  State cur;
  if (!evaluate(sys.pack(start), cur))
    throw InitializationError("starting point is not feasible");

  RepresentationSolution sol;
  bool polished = false;
  int steps = 0;
  for (int pass = 0; pass < opt.max_iter; ++pass) {
    const double gmax = cur.m.cwiseAbs().maxCoeff();
    const bool within = gmax <= opt.tol_grad;
    if (within && polished) {
      sol.converged = true;
      break;
    }
    const Matrix jac = sys.jacobian(sys.unpack(cur.theta), cur.e);
    const Vector d = linalg::solve_square(jac, -cur.m, "moment Jacobian");
    double max_step = 1.0;
    if (canonical) {
      const Matrix b = sys.unpack(cur.theta);
      const Matrix db = sys.unpack(d);
      max_step = fraction_to_boundary(sys.x * b.row(1).transpose(),
                                      sys.x * db.row(1).transpose(),
                                      opt.boundary_fraction);
    }
    State next;
    bool accepted = false;
    if (!within && cur.merit > 1e-30) {
      double step = max_step;
      for (int bt = 0; bt < 60 && !accepted; ++bt, step *= 0.5)
        accepted = evaluate(cur.theta + step * d, next) &&
                   next.merit < cur.merit &&
                   next.merit <= (1.0 - 2e-4 * step) * cur.merit;
    }
    if (!accepted)
      accepted = evaluate(cur.theta + max_step * d, next) &&
                 next.m.cwiseAbs().maxCoeff() < gmax;
    if (!accepted) {
      sol.converged = within;
      break;
    }
    polished = within;
    cur = std::move(next);
    ++steps;
  }
  if (!sol.converged && cur.m.cwiseAbs().maxCoeff() <= opt.tol_constraint)
    sol.converged = true;
  sol.b = sys.unpack(cur.theta);
  sol.e = cur.e;
  sol.m = cur.m;
  sol.iterations = steps;
  return sol;
}

inline void finish(IvFit& fit, const IvOptions& opt, const char* what)
{
  fit.u = ecdf_transform(fit.e).second;
  if (!fit.converged && opt.throw_on_max_iter)
    throw NotConvergedError<IvFit>(std::string(what) +
                                     " did not converge in " +
                                     std::to_string(fit.iterations) +
                                     " iterations",
                                   fit);
}

} // namespace detail

//! Multipliers on the instrument constraints from the stationarity
//! conditions sum_i [y_i - lambda1.z_i - (lambda2.z_i) e_i] de_i/dbeta = 0,
//! a 2k x 2m linear system (square when m = k).
inline std::pair<Vector, Vector> recover_multipliers(const IvFit& fit,
                                                     const Vector& y,
                                                     const Dataset& data)
{
  if (!data.z)
    throw DataError("multiplier recovery needs instruments");
  if (data.m() != data.k())
    throw NotJustIdentifiedError("multiplier recovery needs m = k");
  const Matrix x = make_design(data.x, false).values;
  const Matrix z = make_design(*data.z, false).values;
  const auto k = x.cols();
  const auto m = z.cols();
  const Vector s = x * fit.beta2;
  const Vector e = (y - x * fit.beta1).array() / s.array();
  Matrix de(y.size(), 2 * k);
  de.leftCols(k) = -(s.cwiseInverse().asDiagonal() * x);
  de.rightCols(k) = -((e.array() / s.array()).matrix().asDiagonal() * x);
  Matrix basis(y.size(), 2 * m);
  basis.leftCols(m) = z;
  basis.rightCols(m) = e.asDiagonal() * z;
  const Matrix a = de.transpose() * basis;
  const Vector lambda =
    linalg::solve_square(a, de.transpose() * y, "multiplier system");
  return { lambda.head(m), lambda.tail(m) };
}

//! Solves Z'e = 0, Z'(e^2 - 1) / 2 = 0 for the structural location and
//! scale with e = (y - beta1.x) / (beta2.x). Requires m = k.
inline IvFit fit_iv_direct(const Vector& y, const Dataset& data,
                           const IvOptions& options = {})
{
  options.validate();
  if (!data.z)
    throw DataError("instrumental variables fit needs instruments");
  if (data.m() != data.k())
    throw NotJustIdentifiedError(
      "direct method needs as many instruments as regressors (m=" +
      std::to_string(data.m()) + ", k=" + std::to_string(data.k()) + ")");
  if (y.size() != data.x.rows())
    throw DataError("outcome length differs from regressor rows");
  const Matrix x = build_design(data, false).values;
  const Matrix z = make_design(*data.z, false).values;
  if (!linalg::full_column_rank(z))
    throw SingularJacobianError(
      "instrument matrix is rank deficient; the moment Jacobian is singular");

  const auto k = x.cols();
  Matrix start = Matrix::Zero(2, k);
  start.row(0) = two_stage_least_squares(y, data).transpose();
  const Vector r = y - x * start.row(0).transpose();
  start(1, 0) = std::sqrt(r.squaredNorm() / static_cast<double>(y.size()));
  if (!(start(1, 0) > 0.0))
    throw InitializationError("two-stage residuals are identically zero");

  const BasisSpec basis = canonical_basis();
  const detail::RepresentationSystem sys{ y, z, x, basis, { true, true } };
  const auto sol = detail::solve_representation(sys, start, options);

  IvFit fit;
  fit.method = IvMethod::direct;
  fit.beta1 = sol.b.row(0).transpose();
  fit.beta2 = sol.b.row(1).transpose();
  fit.higher = Matrix(0, k - 1);
  fit.column_means = Vector::Zero(k - 1);
  fit.e = sol.e;
  fit.max_moment = sol.m.cwiseAbs().maxCoeff();
  fit.converged = sol.converged;
  fit.iterations = sol.iterations;
  detail::finish(fit, options, "direct instrumental variables fit");
  std::tie(fit.lambda1, fit.lambda2) = recover_multipliers(fit, y, data);
  return fit;
}

inline IvFit fit_iv_direct(const Dataset& data, const IvOptions& options = {})
{
  validate(data);
  return fit_iv_direct(data.y, data, options);
}

//! Replaces X by its first-stage projection in the constraints:
//! E(X|Z)_j' h_tilde_j(e) = 0, intercept rows for j <= 2 only, with e
//! defined by the structural representation in X. Any m >= k is accepted
//! since the projection always has k columns.
inline IvFit fit_iv_indirect(const Vector& y, const Dataset& data,
                             const BasisSpec& basis,
                             const IvOptions& options = {})
{
  options.validate();
  basis.validate();
  if (!data.z)
    throw DataError("instrumental variables fit needs instruments");
  if (data.m() < data.k())
    throw NotJustIdentifiedError("under-identified: fewer instruments (" +
                                 std::to_string(data.m()) +
                                 ") than regressors (" +
                                 std::to_string(data.k()) + ")");
  if (y.size() != data.x.rows())
    throw DataError("outcome length differs from regressor rows");
  const DesignMatrix xd = build_design(data, true);
  const auto k = xd.cols();
  const auto J = basis.J();
  const FirstStage fs = first_stage(data);
  Matrix w = fs.fitted;
  for (Eigen::Index c = 1; c < k; ++c)
    w.col(c).array() -= xd.column_means(c);

  Matrix start = Matrix::Zero(J, k);
  const Vector b1 = two_stage_least_squares(y, data);
  start.row(0) = center_coefficients(b1, xd).transpose();
  const Vector r = y - make_design(data.x, false).values * b1;
  start(1, 0) = std::sqrt(r.squaredNorm() / static_cast<double>(y.size()));
  if (!(start(1, 0) > 0.0))
    throw InitializationError("two-stage residuals are identically zero");

  std::vector<bool> free(static_cast<std::size_t>(J), !options.pin_higher_slopes);
  free[0] = true;
  const detail::RepresentationSystem sys{ y, w, xd.values, basis, free };
  const auto sol = detail::solve_representation(sys, start, options);

  IvFit fit;
  fit.method = IvMethod::indirect;
  fit.beta1 = uncenter_coefficients(sol.b.row(0).transpose(), xd);
  fit.beta2 = uncenter_coefficients(sol.b.row(1).transpose(), xd);
  fit.higher = sol.b.bottomRightCorner(J - 2, k - 1);
  fit.column_means = xd.column_means.tail(k - 1);
  fit.first_stage = fs.coefficients;
  fit.e = sol.e;
  fit.max_moment = sol.m.cwiseAbs().maxCoeff();
  fit.converged = sol.converged;
  fit.iterations = sol.iterations;
  detail::finish(fit, options, "indirect instrumental variables fit");
  return fit;
}

inline IvFit fit_iv_indirect(const Dataset& data, const BasisSpec& basis,
                             const IvOptions& options = {})
{
  validate(data);
  return fit_iv_indirect(data.y, data, basis, options);
}

} // namespace dualreg
