#pragma once

#include "errors.hpp"
#include "linalg.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dualreg {

//! A sample of outcomes with raw regressors and optional raw instruments.
//! Neither `x` nor `z` carries an intercept column.
struct Dataset
{
  Vector y;
  Matrix x;                //!< n x (k-1)
  std::optional<Matrix> z; //!< n x (m-1)
  std::string outcome_name = "y";
  std::vector<std::string> regressor_names;
  std::vector<std::string> instrument_names;

  Eigen::Index n() const { return y.size(); }
  //! number of columns of the regressor design including the intercept
  Eigen::Index k() const { return x.cols() + 1; }
  //! number of columns of the instrument design including the intercept
  Eigen::Index m() const { return z ? z->cols() + 1 : 0; }
};

//! Shape and finiteness checks plus the identification requirements
//! n >= 2k and at least two distinct outcomes. Throws DataError.
inline void validate(const Dataset& d)
{
  const auto n = d.n();
  if (d.x.rows() != n)
    throw DataError("regressor rows (" + std::to_string(d.x.rows()) +
                    ") differ from outcome length (" + std::to_string(n) +
                    ")");
  if (d.z && d.z->rows() != n)
    throw DataError("instrument rows differ from outcome length");
  if (!d.y.allFinite() || !d.x.allFinite() || (d.z && !d.z->allFinite()))
    throw DataError("non-finite entry in data");
  if (n < 2 * d.k())
    throw DataError("need n >= 2k observations (n=" + std::to_string(n) +
                    ", k=" + std::to_string(d.k()) + ")");
  if (n == 0 || (d.y.array() == d.y(0)).all())
    throw DataError("outcome has fewer than two distinct values");
}

//! Regressor (or instrument) matrix with an intercept column.
struct DesignMatrix
{
  Matrix values;
  bool has_intercept = true;
  bool centered = false;
  //! means subtracted from each column (zero for the intercept and for
  //! uncentered designs)
  Vector column_means;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
  auto row(Eigen::Index i) const { return values.row(i); }
};

//! [1 | raw], optionally mean-centering the raw columns. No rank check.
inline DesignMatrix make_design(const Matrix& raw, bool center)
{
  const auto n = raw.rows();
  DesignMatrix d;
  d.values.resize(n, raw.cols() + 1);
  d.values.col(0).setOnes();
  d.values.rightCols(raw.cols()) = raw;
  d.has_intercept = true;
  d.centered = center;
  d.column_means = Vector::Zero(raw.cols() + 1);
  if (center && n > 0) {
    for (Eigen::Index j = 0; j < raw.cols(); ++j) {
      const double mean = raw.col(j).mean();
      d.column_means(j + 1) = mean;
      d.values.col(j + 1).array() -= mean;
    }
  }
  return d;
}

//! Build [1 | X] (or [1 | Z] when `use_instruments`). Throws
//! DesignRankError when the result is numerically rank deficient.
inline DesignMatrix build_design(const Dataset& data, bool center,
                                 bool use_instruments = false)
{
  if (use_instruments && !data.z)
    throw DataError("instruments requested but dataset has none");
  const Matrix& raw = use_instruments ? *data.z : data.x;
  if (raw.rows() != data.n())
    throw DataError("design rows differ from outcome length");
  if (!raw.allFinite())
    throw DataError("non-finite entry in design");
  DesignMatrix d = make_design(raw, center);
  if (!linalg::full_column_rank(d.values))
    throw DesignRankError(std::string(use_instruments ? "instrument"
                                                      : "regressor") +
                          " design is rank deficient");
  return d;
}

//! Map coefficients on a centered design back to the raw-regressor
//! parameterization (intercept absorbs the shifts).
inline Vector uncenter_coefficients(const Vector& coef,
                                    const DesignMatrix& design)
{
  Vector out = coef;
  if (design.centered)
    out(0) -= coef.tail(coef.size() - 1).dot(
      design.column_means.tail(coef.size() - 1));
  return out;
}

//! Inverse of uncenter_coefficients.
inline Vector center_coefficients(const Vector& coef,
                                  const DesignMatrix& design)
{
  Vector out = coef;
  if (design.centered)
    out(0) += coef.tail(coef.size() - 1).dot(
      design.column_means.tail(coef.size() - 1));
  return out;
}

//! Row of a design for a raw regressor point, honoring centering.
inline Vector design_row(const DesignMatrix& design, const Vector& raw_x)
{
  Vector row(raw_x.size() + 1);
  row(0) = 1.0;
  row.tail(raw_x.size()) = raw_x - design.column_means.tail(raw_x.size());
  return row;
}

} // namespace dualreg
