#pragma once

#include "data.hpp"
#include "errors.hpp"
#include "linalg.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dualreg {

//! rho_tau(r) = r (tau - 1{r < 0})
inline double check_function(double r, double tau)
{
  return r >= 0.0 ? tau * r : (tau - 1.0) * r;
}

inline double check_loss(const Vector& y, const Matrix& x, const Vector& b,
                         double tau)
{
  const Vector r = y - x * b;
  double total = 0.0;
  for (Eigen::Index i = 0; i < r.size(); ++i)
    total += check_function(r(i), tau);
  return total;
}

//! A vertex solution: k observations interpolated by the fitted plane.
struct QrSolution
{
  Vector coef;
  std::vector<Eigen::Index> basis;
  double loss = 0.0;
  int pivots = 0;
};

namespace detail {

//! right derivative at t = 0 of rho_tau(r + c t)
inline double check_slope(double r, double c, double tau, double zero_tol)
{
  if (r > zero_tol)
    return tau * c;
  if (r < -zero_tol)
    return (tau - 1.0) * c;
  return c > 0.0 ? tau * c : (tau - 1.0) * c;
}

//! A few reweighted least-squares passes on the check loss, giving a
//! starting plane near the optimum.
inline Vector smoothed_start(const Vector& y, const Matrix& x, double tau)
{
  Vector b = linalg::least_squares(x, y);
  const double spread =
    std::max(1e-12, (y - x * b).cwiseAbs().mean());
  for (int it = 0; it < 12; ++it) {
    const Vector r = y - x * b;
    const double delta = spread * std::pow(0.5, it + 1);
    Vector w(r.size());
    for (Eigen::Index i = 0; i < r.size(); ++i)
      w(i) = (r(i) >= 0.0 ? tau : 1.0 - tau) / std::max(std::abs(r(i)), delta);
    const Vector sw = w.cwiseSqrt();
    Eigen::ColPivHouseholderQR<Matrix> qr(sw.asDiagonal() * x);
    if (qr.rank() < x.cols())
      break;
    b = qr.solve((sw.array() * y.array()).matrix());
  }
  return b;
}

//! Greedy choice of k observations with the smallest residuals whose rows
//! form a nonsingular matrix.
inline std::vector<Eigen::Index> basis_near(const Vector& y, const Matrix& x,
                                            const Vector& b)
{
  const auto n = x.rows();
  const auto k = x.cols();
  const Vector r = (y - x * b).cwiseAbs();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(),
            [&r](Eigen::Index a, Eigen::Index c) { return r(a) < r(c); });
  std::vector<Eigen::Index> basis;
  Matrix rows(0, k);
  for (Eigen::Index i : order) {
    Matrix trial(rows.rows() + 1, k);
    trial << rows, x.row(i);
    if (linalg::pivoted_qr(trial.transpose()).rank() == trial.rows()) {
      rows = std::move(trial);
      basis.push_back(i);
      if (static_cast<Eigen::Index>(basis.size()) == k)
        return basis;
    }
  }
  throw DesignRankError("no nonsingular interpolating basis exists");
}

} // namespace detail

//! Exact minimizer of sum_i rho_tau(y_i - b.x_i) by descent over
//! interpolating bases: at each vertex the steepest edge direction is
//! followed with an exact line search (a weighted-median walk over the
//! residual breakpoints). `start` warm-starts from a previous basis.
inline QrSolution fit_qr_exact(const Vector& y, const Matrix& x, double tau,
                               const std::vector<Eigen::Index>* start = nullptr)
{
  if (!(tau > 0.0 && tau < 1.0))
    throw DomainError("quantile index must lie in (0, 1)");
  const auto n = x.rows();
  const auto k = x.cols();
  if (y.size() != n)
    throw DataError("outcome length differs from design rows");
  if (n < k || !linalg::full_column_rank(x))
    throw DesignRankError("quantile regression design is rank deficient");

  std::vector<Eigen::Index> basis;
  if (start && static_cast<Eigen::Index>(start->size()) == k)
    basis = *start;
  else
    basis = detail::basis_near(y, x, detail::smoothed_start(y, x, tau));

  const double zero_tol =
    1e-13 * std::max(1.0, y.cwiseAbs().maxCoeff());
  std::vector<char> in_basis(static_cast<std::size_t>(n), 0);
  std::vector<std::pair<double, double>> breaks;
  breaks.reserve(static_cast<std::size_t>(n));

  QrSolution sol;
  const int max_pivots = 100 + 50 * static_cast<int>(n);
  for (;;) {
    Matrix xh(k, k);
    Vector yh(k);
    for (Eigen::Index p = 0; p < k; ++p) {
      xh.row(p) = x.row(basis[static_cast<std::size_t>(p)]);
      yh(p) = y(basis[static_cast<std::size_t>(p)]);
    }
    Eigen::PartialPivLU<Matrix> lu(xh);
    const Matrix xh_inv = lu.inverse();
    if (!xh_inv.allFinite())
      throw DesignRankError("singular interpolating basis");
    const Vector b = xh_inv * yh;
    const Vector r = y - x * b;
    const Matrix z = x * xh_inv; // z(i, p) = x_i . (X_h^{-1} e_p)

    std::fill(in_basis.begin(), in_basis.end(), 0);
    for (auto i : basis)
      in_basis[static_cast<std::size_t>(i)] = 1;

    // directional derivatives for moving basis observation p off the plane
    // with sign sigma: residual of p becomes -sigma t, others r_i - t a_i
    double best = 0.0;
    Eigen::Index best_p = -1;
    double best_sigma = 0.0;
    for (Eigen::Index p = 0; p < k; ++p) {
      for (double sigma : { 1.0, -1.0 }) {
        double slope = detail::check_slope(0.0, -sigma, tau, zero_tol);
        double mass = 1.0;
        for (Eigen::Index i = 0; i < n; ++i) {
          if (in_basis[static_cast<std::size_t>(i)])
            continue;
          const double a = sigma * z(i, p);
          slope += detail::check_slope(r(i), -a, tau, zero_tol);
          mass += std::abs(a);
        }
        if (slope < best - 1e-12 * mass) {
          best = slope;
          best_p = p;
          best_sigma = sigma;
        }
      }
    }
    if (best_p < 0 || sol.pivots >= max_pivots) {
      sol.coef = b;
      sol.basis = basis;
      sol.loss = 0.0;
      for (Eigen::Index i = 0; i < n; ++i)
        sol.loss += check_function(r(i), tau);
      if (best_p >= 0)
        throw MaxIterationsError("quantile regression pivot budget exhausted",
                                 sol.pivots);
      return sol;
    }

    // walk breakpoints t_i = r_i / a_i > 0 until the slope turns nonnegative
    breaks.clear();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (in_basis[static_cast<std::size_t>(i)])
        continue;
      const double a = best_sigma * z(i, best_p);
      if (a == 0.0 || std::abs(r(i)) <= zero_tol)
        continue;
      const double t = r(i) / a;
      if (t > 0.0)
        breaks.emplace_back(t, static_cast<double>(i));
    }
    std::sort(breaks.begin(), breaks.end());
    double slope = best;
    Eigen::Index entering = -1;
    for (const auto& [t, idx] : breaks) {
      const auto i = static_cast<Eigen::Index>(idx);
      slope += std::abs(best_sigma * z(i, best_p));
      if (slope >= 0.0) {
        entering = i;
        break;
      }
    }
    if (entering < 0) {
      // unbounded descent cannot occur for 0 < tau < 1 with a full-rank
      // design; treat as numerical breakdown
      throw DesignRankError("quantile regression line search failed");
    }
    basis[static_cast<std::size_t>(best_p)] = entering;
    ++sol.pivots;
  }
}

//! Check-loss minimizing coefficients at quantile index tau.
inline Vector fit_qr(const Vector& y, const DesignMatrix& design, double tau)
{
  return fit_qr_exact(y, design.values, tau).coef;
}

//! Coefficient process over a tau grid plus the settings used by the
//! rearranged conditional distribution estimator.
struct QrFit
{
  Vector taus;
  Matrix coefficients; //!< R x k
  double epsilon = 0.001;
  int u_grid_size = 999;
};

inline void validate_tau_grid(std::span<const double> taus)
{
  if (taus.empty())
    throw GridError("empty quantile grid");
  for (std::size_t r = 0; r < taus.size(); ++r) {
    if (!(taus[r] > 0.0 && taus[r] < 1.0))
      throw GridError("quantile index outside (0, 1) at grid position " +
                      std::to_string(r));
    if (r > 0 && !(taus[r] > taus[r - 1]))
      throw GridError("quantile grid not strictly increasing at position " +
                      std::to_string(r));
  }
}

//! Fits every tau, warm-starting each from the previous basis.
inline QrFit qr_coefficient_process(const Vector& y, const DesignMatrix& design,
                                    std::span<const double> tau_grid)
{
  validate_tau_grid(tau_grid);
  QrFit fit;
  fit.taus = Eigen::Map<const Vector>(tau_grid.data(),
                                      static_cast<Eigen::Index>(tau_grid.size()));
  fit.coefficients.resize(fit.taus.size(), design.cols());
  std::vector<Eigen::Index> basis;
  for (Eigen::Index r = 0; r < fit.taus.size(); ++r) {
    try {
      auto sol = fit_qr_exact(y, design.values, fit.taus(r),
                              basis.empty() ? nullptr : &basis);
      fit.coefficients.row(r) = sol.coef.transpose();
      basis = std::move(sol.basis);
    } catch (const Error& err) {
      throw Error("quantile regression failed at tau index " +
                  std::to_string(r) + " (tau=" + std::to_string(fit.taus(r)) +
                  "): " + err.what());
    }
  }
  return fit;
}

//! R points equispaced on [epsilon, 1 - epsilon].
inline std::vector<double> rearrangement_tau_grid(int points = 99,
                                                  double epsilon = 0.001)
{
  std::vector<double> grid(static_cast<std::size_t>(points));
  for (int r = 0; r < points; ++r)
    grid[static_cast<std::size_t>(r)] =
      points == 1 ? 0.5
                  : epsilon + (1.0 - 2.0 * epsilon) * r / (points - 1.0);
  return grid;
}

//! Parse "a:b:step" into the inclusive grid a, a+step, ..., b.
inline std::vector<double> parse_tau_grid(const std::string& spec)
{
  const auto c1 = spec.find(':');
  const auto c2 = c1 == std::string::npos ? c1 : spec.find(':', c1 + 1);
  if (c2 == std::string::npos)
    throw GridError("tau grid must look like a:b:step, got '" + spec + "'");
  double a = 0, b = 0, step = 0;
  try {
    a = std::stod(spec.substr(0, c1));
    b = std::stod(spec.substr(c1 + 1, c2 - c1 - 1));
    step = std::stod(spec.substr(c2 + 1));
  } catch (const std::exception&) {
    throw GridError("tau grid must look like a:b:step, got '" + spec + "'");
  }
  if (!(step > 0.0) || b < a)
    throw GridError("tau grid needs step > 0 and b >= a");
  std::vector<double> grid;
  const auto count = static_cast<long>(std::floor((b - a) / step + 1e-9));
  for (long i = 0; i <= count; ++i)
    grid.push_back(a + static_cast<double>(i) * step);
  validate_tau_grid(grid);
  return grid;
}

//! Evaluator for u = eps + integral over [eps, 1 - eps] of
//! 1{Q(u|x) <= y} du, by the midpoint rule on u_grid_size points with
//! coefficients interpolated linearly between fitted taus.
class RearrangedCdf
{
public:
  explicit RearrangedCdf(const QrFit& fit)
    : epsilon_(fit.epsilon)
  {
    if (!(fit.epsilon > 0.0 && fit.epsilon < 0.5))
      throw GridError("epsilon must lie in (0, 0.5)");
    if (fit.u_grid_size < 1)
      throw GridError("u grid needs at least one point");
    if (fit.taus.size() == 0 || fit.taus.size() != fit.coefficients.rows())
      throw GridError("quantile process is empty or malformed");
    const double slack = 1e-12;
    if (fit.taus(0) > fit.epsilon + slack ||
        fit.taus(fit.taus.size() - 1) < 1.0 - fit.epsilon - slack)
      throw GridError("quantile grid does not cover [epsilon, 1 - epsilon]");
    const int g = fit.u_grid_size;
    weight_ = (1.0 - 2.0 * fit.epsilon) / g;
    coef_.resize(g, fit.coefficients.cols());
    const auto r = fit.taus.size();
    Eigen::Index hi = 0;
    for (int j = 0; j < g; ++j) {
      const double u = fit.epsilon + (j + 0.5) * weight_;
      while (hi < r - 1 && fit.taus(hi) < u)
        ++hi;
      if (hi == 0 || fit.taus(hi) <= u) {
        coef_.row(j) = fit.coefficients.row(hi);
        continue;
      }
      const double w =
        (u - fit.taus(hi - 1)) / (fit.taus(hi) - fit.taus(hi - 1));
      coef_.row(j) = (1.0 - w) * fit.coefficients.row(hi - 1) +
                     w * fit.coefficients.row(hi);
    }
  }

  //! Unsorted quantile predictions Q(u_g|x) over the midpoint grid.
  Vector quantile_curve(const Vector& x_row) const
  {
    if (x_row.size() != coef_.cols())
      throw DataError("design row length differs from coefficient count");
    return coef_ * x_row;
  }

  double operator()(const Vector& x_row, double y) const
  {
    return from_curve(quantile_curve(x_row), y);
  }

  double from_curve(const Vector& curve, double y) const
  {
    const auto count = (curve.array() <= y).count();
    return epsilon_ + weight_ * static_cast<double>(count);
  }

  //! Values at many y for one x, via one sort of the curve.
  Vector cdf_values(const Vector& x_row, const Vector& ys) const
  {
    Vector curve = quantile_curve(x_row);
    std::sort(curve.begin(), curve.end());
    Vector out(ys.size());
    for (Eigen::Index i = 0; i < ys.size(); ++i) {
      const auto count =
        std::upper_bound(curve.begin(), curve.end(), ys(i)) - curve.begin();
      out(i) = epsilon_ + weight_ * static_cast<double>(count);
    }
    return out;
  }

  double epsilon() const { return epsilon_; }
  double weight() const { return weight_; }
  Eigen::Index grid_size() const { return coef_.rows(); }

private:
  double epsilon_;
  double weight_ = 0.0;
  Matrix coef_;
};

inline double rearranged_cdf(const QrFit& fit, const Vector& x_row,
                             double y_value)
{
  return RearrangedCdf(fit)(x_row, y_value);
}

//! Rearranged quantile functions at x: for each u level the smallest point
//! of an equispaced y grid on [y_lo, y_hi] where the rearranged cdf reaches
//! u (y_hi if it never does).
inline Vector rearranged_quantiles(const RearrangedCdf& cdf,
                                   const Vector& x_row,
                                   std::span<const double> u_levels,
                                   double y_lo, double y_hi, int points = 512)
{
  if (points < 2 || !(y_hi > y_lo))
    throw GridError("y grid needs at least two points and y_hi > y_lo");
  const Vector ys = Vector::LinSpaced(points, y_lo, y_hi);
  const Vector f = cdf.cdf_values(x_row, ys);
  Vector out(static_cast<Eigen::Index>(u_levels.size()));
  for (std::size_t l = 0; l < u_levels.size(); ++l) {
    const auto it = std::lower_bound(f.begin(), f.end(), u_levels[l]);
    out(static_cast<Eigen::Index>(l)) =
      it == f.end() ? y_hi : ys(it - f.begin());
  }
  return out;
}

} // namespace dualreg
