#pragma once

#include "errors.hpp"
#include "linalg.hpp"

#include <algorithm>
#include <numeric>
#include <utility>
#include <vector>

namespace dualreg {

//! Empirical distribution of a residual vector with plotting positions
//! rank / (n + 1), so every position lies strictly inside (0, 1).
struct Ecdf
{
  Vector sorted_values;
  Vector plotting_positions;

  Eigen::Index size() const { return sorted_values.size(); }

  //! Inverse ECDF: linear between plotting positions, flat beyond the
  //! extreme positions. Throws DomainError unless 0 < u < 1.
  double quantile(double u) const
  {
    if (!(u > 0.0 && u < 1.0))
      throw DomainError("quantile level must lie in (0, 1)");
    const auto n = size();
    if (n == 0)
      throw DomainError("empty ECDF");
    const double step = 1.0 / static_cast<double>(n + 1);
    if (u <= step)
      return sorted_values(0);
    if (u >= static_cast<double>(n) * step)
      return sorted_values(n - 1);
    // positions are (i + 1) * step for i = 0..n-1
    const double t = u / step - 1.0;
    auto lo = static_cast<Eigen::Index>(t);
    lo = std::min<Eigen::Index>(lo, n - 2);
    const double w = t - static_cast<double>(lo);
    return (1.0 - w) * sorted_values(lo) + w * sorted_values(lo + 1);
  }
};

//! Rank transform u_i = rank_i / (n + 1) with average ranks for ties.
inline std::pair<Ecdf, Vector> ecdf_transform(const Vector& e)
{
  const auto n = e.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&e](Eigen::Index a, Eigen::Index b) { return e(a) < e(b); });

  Ecdf ecdf;
  ecdf.sorted_values.resize(n);
  ecdf.plotting_positions.resize(n);
  const double denom = static_cast<double>(n + 1);
  for (Eigen::Index r = 0; r < n; ++r) {
    ecdf.sorted_values(r) = e(order[static_cast<std::size_t>(r)]);
    ecdf.plotting_positions(r) = static_cast<double>(r + 1) / denom;
  }

  Vector u(n);
  Eigen::Index r = 0;
  while (r < n) {
    Eigen::Index s = r;
    while (s + 1 < n && ecdf.sorted_values(s + 1) == ecdf.sorted_values(r))
      ++s;
    // ranks r+1 .. s+1 share their average
    const double avg = 0.5 * static_cast<double>(r + s + 2) / denom;
    for (Eigen::Index t = r; t <= s; ++t)
      u(order[static_cast<std::size_t>(t)]) = avg;
    r = s + 1;
  }
  return { std::move(ecdf), std::move(u) };
}

} // namespace dualreg
