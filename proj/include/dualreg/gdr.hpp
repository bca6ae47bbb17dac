#pragma once

#include "data.hpp"
#include "ecdf.hpp"
#include "errors.hpp"
#include "linalg.hpp"
#include "solver.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace dualreg {

//! One term of the representation y = sum_j beta_j(x) h_j(e), with its
//! antiderivative h_tilde (the constraint function) and derivative h_prime.
struct BasisFunction
{
  std::string name;
  std::function<double(double)> h;
  std::function<double(double)> h_tilde;
  std::function<double(double)> h_prime;
};

//! J basis terms. The first two must be the canonical pair h1 = 1, h2 = e
//! (with h_tilde1 = e, h_tilde2 = (e^2 - 1) / 2); only those carry an
//! intercept.
struct BasisSpec
{
  std::string name;
  std::vector<BasisFunction> terms;
  std::vector<bool> with_intercept;

  Eigen::Index J() const { return static_cast<Eigen::Index>(terms.size()); }

  void validate() const
  {
    if (terms.size() < 2)
      throw InvalidSpecError("basis needs at least two terms");
    if (with_intercept.size() != terms.size())
      throw InvalidSpecError("with_intercept must have one flag per term");
    for (std::size_t j = 0; j < terms.size(); ++j) {
      const auto& t = terms[j];
      if (!t.h || !t.h_tilde || !t.h_prime)
        throw InvalidSpecError("basis term " + std::to_string(j + 1) +
                               " is missing a function");
      if (with_intercept[j] != (j < 2))
        throw InvalidSpecError(
          "only the first two basis terms carry an intercept");
    }
    const auto close = [](double a, double b) {
      return std::abs(a - b) <= 1e-6 * std::max(1.0, std::abs(b));
    };
    for (int p = 0; p < 25; ++p) {
      const double e = -3.0 + 0.25 * p;
      if (!close(terms[0].h(e), 1.0) || !close(terms[0].h_tilde(e), e) ||
          !close(terms[1].h(e), e) ||
          !close(terms[1].h_tilde(e), 0.5 * (e * e - 1.0)))
        throw InvalidSpecError("first two basis terms must be the canonical "
                               "pair (1, e) with antiderivatives "
                               "(e, (e^2 - 1) / 2)");
      const double step = 1e-5 * std::max(1.0, std::abs(e));
      for (std::size_t j = 0; j < terms.size(); ++j) {
        const auto& t = terms[j];
        const double dt = (t.h_tilde(e + step) - t.h_tilde(e - step)) / (2 * step);
        const double dh = (t.h(e + step) - t.h(e - step)) / (2 * step);
        if (!close(dt, t.h(e)) || !close(dh, t.h_prime(e)))
          throw InvalidSpecError("basis term " + std::to_string(j + 1) + " ('" +
                                 t.name +
                                 "') fails the derivative check at e=" +
                                 std::to_string(e));
      }
    }
  }
};

inline BasisFunction constant_term()
{
  return { "1", [](double) { return 1.0; }, [](double e) { return e; },
           [](double) { return 0.0; } };
}

inline BasisFunction linear_term()
{
  return { "e", [](double e) { return e; },
           [](double e) { return 0.5 * (e * e - 1.0); },
           [](double) { return 1.0; } };
}

//! h(e) = e^3 / (1 + e^2); bounded derivative (at most 9/8), so the
//! representation stays monotone for moderate coefficients.
inline BasisFunction rational_cubic_term()
{
  return { "e^3/(1+e^2)",
           [](double e) { return e * e * e / (1.0 + e * e); },
           [](double e) { return 0.5 * e * e - 0.5 * std::log1p(e * e); },
           [](double e) {
             const double q = 1.0 + e * e;
             return (e * e * e * e + 3.0 * e * e) / (q * q);
           } };
}

inline BasisSpec canonical_basis()
{
  return { "canonical-J2", { constant_term(), linear_term() }, { true, true } };
}

inline BasisSpec rational_cubic_basis()
{
  return { "rational-J3",
           { constant_term(), linear_term(), rational_cubic_term() },
           { true, true, false } };
}

inline BasisSpec basis_by_name(const std::string& name)
{
  if (name == "canonical-J2")
    return canonical_basis();
  if (name == "rational-J3")
    return rational_cubic_basis();
  throw InvalidSpecError("unknown basis '" + name +
                         "' (known: canonical-J2, rational-J3)");
}

struct GdrFit
{
  Vector gamma;  //!< (gamma_1, gamma_2)
  Matrix lambda; //!< J x (k-1) slopes on the centered regressors
  Vector column_means; //!< raw regressor means used for centering
  Vector e;
  Vector u;
  double objective = 0.0;
  double max_moment = 0.0;
  bool converged = false;
  int iterations = 0;
};

namespace detail {

//! Solve sum_j c_j h_j(e) = y for e.
inline double invert_map(double y, const Vector& c, const BasisSpec& basis,
                         std::size_t index = 0)
{
  const auto J = basis.J();
  auto g = [&](double e) {
    double v = -y;
    for (Eigen::Index j = 0; j < J; ++j)
      v += c(j) * basis.terms[static_cast<std::size_t>(j)].h(e);
    return v;
  };
  auto dg = [&](double e) {
    double v = 0.0;
    for (Eigen::Index j = 0; j < J; ++j)
      v += c(j) * basis.terms[static_cast<std::size_t>(j)].h_prime(e);
    return v;
  };
  auto non_monotone = [&](double e) {
    return NonMonotoneMapError("representation is not increasing in e near e=" +
                                 std::to_string(e) + " at observation " +
                                 std::to_string(index),
                               index);
  };
  const double tol = 1e-12 * std::max(1.0, std::abs(y));
  const double limit = 1e6;

  double e = c(1) > 0.0 ? (y - c(0)) / c(1) : 0.0;
  if (!std::isfinite(e) || std::abs(e) > limit)
    e = std::clamp(std::isfinite(e) ? e : 0.0, -limit, limit);
  double ge = g(e);
  if (std::abs(ge) <= tol)
    return e;
  if (!(dg(e) > 0.0))
    throw non_monotone(e);

  // expanding bracket in the direction of the root
  double lo = e, hi = e, glo = ge, ghi = ge;
  double width = std::max(1.0, 1e-3 * std::abs(e));
  if (ge < 0.0) {
    while (ghi < 0.0) {
      if (hi >= limit)
        throw BracketError("no sign change for |e| <= 1e6 at observation " +
                             std::to_string(index),
                           index);
      lo = hi;
      glo = ghi;
      hi = std::min(limit, hi + width);
      width *= 2.0;
      ghi = g(hi);
      if (ghi < glo || !(dg(hi) > 0.0))
        throw non_monotone(hi);
    }
  } else {
    while (glo > 0.0) {
      if (lo <= -limit)
        throw BracketError("no sign change for |e| <= 1e6 at observation " +
                             std::to_string(index),
                           index);
      hi = lo;
      ghi = glo;
      lo = std::max(-limit, lo - width);
      width *= 2.0;
      glo = g(lo);
      if (glo > ghi || !(dg(lo) > 0.0))
        throw non_monotone(lo);
    }
  }
  if (glo == 0.0)
    return lo;
  if (ghi == 0.0)
    return hi;

  // safeguarded Newton inside [lo, hi]
  e = std::clamp(e, lo, hi);
  for (int it = 0; it < 200; ++it) {
    const double v = g(e);
    if (std::abs(v) <= tol)
      return e;
    if (v < 0.0)
      lo = e;
    else
      hi = e;
    const double d = dg(e);
    if (!(d > 0.0))
      throw non_monotone(e);
    double next = e - v / d;
    if (!(next > lo && next < hi))
      next = 0.5 * (lo + hi);
    if (next == e || hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() *
                                    std::max(1.0, std::abs(e)))
      return e;
    e = next;
  }
  return e;
}

//! Row j of the J x k coefficient matrix holds (intercept, slopes) of
//! beta_j(x); intercepts of terms j >= 3 are zero.
inline Matrix coefficient_matrix(const Vector& gamma, const Matrix& lambda)
{
  const auto J = lambda.rows();
  Matrix b = Matrix::Zero(J, lambda.cols() + 1);
  b(0, 0) = gamma(0);
  b(1, 0) = gamma(1);
  b.rightCols(lambda.cols()) = lambda;
  return b;
}

inline Eigen::Index parameter_count(Eigen::Index J, Eigen::Index k)
{
  return 2 * k + (J - 2) * (k - 1);
}

//! theta = (gamma_1, lambda_1, gamma_2, lambda_2, lambda_3, ..., lambda_J)
inline Vector pack(const Matrix& b)
{
  const auto J = b.rows();
  const auto k = b.cols();
  Vector theta(parameter_count(J, k));
  Eigen::Index pos = 0;
  for (Eigen::Index j = 0; j < J; ++j) {
    const Eigen::Index first = j < 2 ? 0 : 1;
    for (Eigen::Index c = first; c < k; ++c)
      theta(pos++) = b(j, c);
  }
  return theta;
}

inline Matrix unpack(const Vector& theta, Eigen::Index J, Eigen::Index k)
{
  Matrix b = Matrix::Zero(J, k);
  Eigen::Index pos = 0;
  for (Eigen::Index j = 0; j < J; ++j) {
    const Eigen::Index first = j < 2 ? 0 : 1;
    for (Eigen::Index c = first; c < k; ++c)
      b(j, c) = theta(pos++);
  }
  return b;
}

inline Vector invert_all(const Vector& y, const Matrix& x, const Matrix& b,
                         const BasisSpec& basis)
{
  const Matrix c = x * b.transpose(); // n x J
  Vector e(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i)
    e(i) = invert_map(y(i), c.row(i).transpose(), basis,
                      static_cast<std::size_t>(i));
  return e;
}

//! Stack sum_i x_ji f_j(e_i), with x_j the full row for j <= 2 and the
//! slope part otherwise.
template<class F>
Vector stack_rows(const Matrix& x, const Vector& e, const BasisSpec& basis,
                  F&& pick)
{
  const auto J = basis.J();
  const auto k = x.cols();
  Vector out(parameter_count(J, k));
  Eigen::Index pos = 0;
  for (Eigen::Index j = 0; j < J; ++j) {
    const auto& term = basis.terms[static_cast<std::size_t>(j)];
    Vector f(e.size());
    for (Eigen::Index i = 0; i < e.size(); ++i)
      f(i) = pick(term, e(i));
    if (j < 2) {
      out.segment(pos, k) = x.transpose() * f;
      pos += k;
    } else {
      out.segment(pos, k - 1) = x.rightCols(k - 1).transpose() * f;
      pos += k - 1;
    }
  }
  return out;
}

inline DesignMatrix centered_copy(const DesignMatrix& design)
{
  if (design.centered)
    return design;
  DesignMatrix d = design;
  d.centered = true;
  for (Eigen::Index j = 1; j < d.cols(); ++j) {
    const double mean = d.values.col(j).mean();
    d.column_means(j) += mean;
    d.values.col(j).array() -= mean;
  }
  return d;
}

} // namespace detail

//! e_i solving y_i = sum_j beta_j(x_i) h_j(e_i) at one observation; x_i
//! holds the (centered) regressors without the intercept.
inline double invert_foc(double y_i, const Vector& x_i, const Vector& gamma,
                         const Matrix& lambda, const BasisSpec& basis)
{
  if (lambda.rows() != basis.J() || lambda.cols() != x_i.size() ||
      gamma.size() != 2)
    throw DataError("coefficient dimensions do not match the basis");
  Vector row(x_i.size() + 1);
  row << 1.0, x_i;
  const Vector c = detail::coefficient_matrix(gamma, lambda) * row;
  return detail::invert_map(y_i, c, basis);
}

//! Stacked moments (X_j' h_tilde_j(e))_j / n, with the intercept row only for
//! j = 1, 2.
inline Vector gdr_moments(const Vector& gamma, const Matrix& lambda,
                          const Vector& y, const DesignMatrix& design,
                          const BasisSpec& basis)
{
  if (lambda.rows() != basis.J() || lambda.cols() != design.cols() - 1 ||
      gamma.size() != 2)
    throw DataError("coefficient dimensions do not match the basis");
  const Matrix b = detail::coefficient_matrix(gamma, lambda);
  const Vector e = detail::invert_all(y, design.values, b, basis);
  return detail::stack_rows(design.values, e, basis,
                            [](const BasisFunction& t, double v) {
                              return t.h_tilde(v);
                            }) /
         static_cast<double>(y.size());
}

enum class GdrInit
{
  dual, //!< canonical dual regression fit, higher terms zero
  ols,  //!< least-squares location, residual sd scale
  provided
};

struct GdrOptions
{
  double tol_grad = 1e-10;
  double tol_constraint = 1e-8;
  int max_iter = 200;
  GdrInit init = GdrInit::dual;
  Vector gamma_start;
  Matrix lambda_start;
  bool throw_on_max_iter = true;

  void validate() const
  {
    if (!(tol_grad > 0.0) || !(tol_constraint > 0.0))
      throw DomainError("solver tolerances must be positive");
    if (max_iter < 1)
      throw DomainError("max_iter must be positive");
  }
};

//! Minimizes (1/n) sum_i [y_i e_i - sum_j beta_j(x_i) h_tilde_j(e_i)], a
//! convex function of the coefficients whose gradient is minus the stacked
//! moments and whose Hessian is (1/n) sum_i v_i v_i' / (dy/de)_i with
//! v_i = (x_ji h_j(e_i))_j. The design is centered internally.
inline GdrFit fit_gdr(const Vector& y, const DesignMatrix& raw_design,
                      const BasisSpec& basis, const GdrOptions& options = {})
{
  options.validate();
  basis.validate();
  const DesignMatrix design = detail::centered_copy(raw_design);
  const auto n = design.rows();
  const auto k = design.cols();
  const auto J = basis.J();
  if (y.size() != n)
    throw DataError("outcome length differs from design rows");
  if (n < detail::parameter_count(J, k))
    throw DataError("fewer observations than basis coefficients");
  if (!linalg::full_column_rank(design.values))
    throw DesignRankError("design matrix is rank deficient");
  const auto& X = design.values;
  const double dn = static_cast<double>(n);

  Matrix b = Matrix::Zero(J, k);
  switch (options.init) {
    case GdrInit::provided:
      if (options.gamma_start.size() != 2 || options.lambda_start.rows() != J ||
          options.lambda_start.cols() != k - 1)
        throw InitializationError("provided start has the wrong dimension");
      b = detail::coefficient_matrix(options.gamma_start, options.lambda_start);
      break;
    case GdrInit::dual: {
      SolverOptions so;
      so.throw_on_max_iter = false;
      const DualFit d = fit_dual(y, design, so);
      b.row(0) = d.lambda1.transpose();
      b.row(1) = d.lambda2.transpose();
      break;
    }
    case GdrInit::ols: {
      const auto [l1, l2] = ols_start(y, design);
      b.row(0) = l1.transpose();
      b.row(1) = l2.transpose();
      break;
    }
  }

  struct State
  {
    Vector theta, e, m;
    double f = 0.0;
  };
  auto evaluate = [&](const Vector& theta, State& out) {
    const Matrix coef = detail::unpack(theta, J, k);
    try {
      out.e = detail::invert_all(y, X, coef, basis);
    } catch (const NonMonotoneMapError&) {
      return false;
    } catch (const BracketError&) {
      return false;
    }
    const Matrix c = X * coef.transpose();
    double f = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      f += y(i) * out.e(i);
      for (Eigen::Index j = 0; j < J; ++j)
        f -= c(i, j) * basis.terms[static_cast<std::size_t>(j)].h_tilde(out.e(i));
    }
    out.f = f / dn;
    out.theta = theta;
    out.m = detail::stack_rows(X, out.e, basis,
                               [](const BasisFunction& t, double v) {
                                 return t.h_tilde(v);
                               }) /
            dn;
    return std::isfinite(out.f) && out.m.allFinite();
  };
  auto hessian = [&](const State& s) {
    const Matrix coef = detail::unpack(s.theta, J, k);
    const Matrix c = X * coef.transpose();
    const auto p = detail::parameter_count(J, k);
    Matrix v(n, p);
    for (Eigen::Index i = 0; i < n; ++i) {
      double slope = 0.0;
      for (Eigen::Index j = 0; j < J; ++j)
        slope += c(i, j) * basis.terms[static_cast<std::size_t>(j)].h_prime(s.e(i));
      const double w = 1.0 / std::sqrt(slope * dn);
      Eigen::Index pos = 0;
      for (Eigen::Index j = 0; j < J; ++j) {
        const double hj = basis.terms[static_cast<std::size_t>(j)].h(s.e(i)) * w;
        const Eigen::Index first = j < 2 ? 0 : 1;
        for (Eigen::Index col = first; col < k; ++col)
          v(i, pos++) = X(i, col) * hj;
      }
    }
    Eigen::ColPivHouseholderQR<Matrix> qr(v);
    qr.setThreshold(1e-10);
    if (qr.rank() < p)
      throw SingularJacobianError(
        "moment Jacobian is singular; the basis terms are collinear");
    return Matrix(v.transpose() * v);
  };

  State cur;
  if (!evaluate(detail::pack(b), cur)) {
    // surface the inversion failure with its diagnostics
    try {
      detail::invert_all(y, X, b, basis);
    } catch (const NonMonotoneMapError& err) {
      throw NonMonotoneMapError(std::string("at the starting point: ") +
                                  err.what(),
                                err.index());
    }
    throw InitializationError("starting point is not feasible");
  }

  bool converged = false;
  bool polished = false;
  int steps = 0;
  for (int pass = 0; pass < options.max_iter; ++pass) {
    const double gmax = cur.m.cwiseAbs().maxCoeff();
    const bool within = gmax <= options.tol_grad;
    if (within && polished) {
      converged = true;
      break;
    }
    const Vector d = detail::regularized_newton_step(hessian(cur), cur.m);
    const double slope = -cur.m.dot(d);
    const bool local =
      within || -slope <= 1e-12 * std::max(1.0, std::abs(cur.f));
    State next;
    bool accepted = false;
    double step = 1.0;
    if (!local) {
      for (int bt = 0; bt < 60 && !accepted; ++bt, step *= 0.5)
        accepted = evaluate(cur.theta + step * d, next) && next.f < cur.f &&
                   next.f <= cur.f + 1e-4 * step * slope;
    }
    if (!accepted)
      accepted = evaluate(cur.theta + d, next) &&
                 next.m.cwiseAbs().maxCoeff() < gmax;
    if (!accepted) {
      converged = within;
      break;
    }
    polished = within;
    cur = std::move(next);
    ++steps;
  }
  const double final_max = cur.m.cwiseAbs().maxCoeff();
  if (!converged && final_max <= options.tol_constraint)
    converged = true;

  const Matrix coef = detail::unpack(cur.theta, J, k);
  GdrFit fit;
  fit.gamma = coef.col(0).head(2);
  fit.lambda = coef.rightCols(k - 1);
  fit.column_means = design.column_means.tail(k - 1);
  fit.e = cur.e;
  fit.u = ecdf_transform(fit.e).second;
  fit.objective = cur.f;
  fit.max_moment = final_max;
  fit.converged = converged;
  fit.iterations = steps;
  if (!converged && options.throw_on_max_iter)
    throw NotConvergedError<GdrFit>(
      "generalized dual regression did not converge in " +
        std::to_string(steps) + " iterations",
      fit);
  return fit;
}

inline GdrFit fit_gdr(const Dataset& data, const BasisSpec& basis,
                      const GdrOptions& options = {})
{
  validate(data);
  return fit_gdr(data.y, build_design(data, true), basis, options);
}

//! beta_j(x) for j = 1..J at raw regressors x (no intercept entry).
inline Vector gdr_coefficients(const GdrFit& fit, const Vector& raw_x)
{
  Vector row(raw_x.size() + 1);
  row << 1.0, raw_x - fit.column_means;
  return detail::coefficient_matrix(fit.gamma, fit.lambda) * row;
}

//! y = sum_j beta_j(x) h_j(e) at raw regressors x.
inline double gdr_reconstruct(const GdrFit& fit, const BasisSpec& basis,
                              const Vector& raw_x, double e)
{
  const Vector c = gdr_coefficients(fit, raw_x);
  double y = 0.0;
  for (Eigen::Index j = 0; j < c.size(); ++j)
    y += c(j) * basis.terms[static_cast<std::size_t>(j)].h(e);
  return y;
}

//! dy/de at raw regressors x; positive for an admissible fit.
inline double gdr_slope(const GdrFit& fit, const BasisSpec& basis,
                        const Vector& raw_x, double e)
{
  const Vector c = gdr_coefficients(fit, raw_x);
  double d = 0.0;
  for (Eigen::Index j = 0; j < c.size(); ++j)
    d += c(j) * basis.terms[static_cast<std::size_t>(j)].h_prime(e);
  return d;
}

} // namespace dualreg
