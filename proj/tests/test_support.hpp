#pragma once

#include <dualreg/data.hpp>
#include <dualreg/linalg.hpp>

#include <cmath>
#include <random>

namespace dualreg::testing {

inline Vector normal_vector(std::mt19937_64& rng, Eigen::Index n,
                            double mean = 0.0, double sd = 1.0)
{
  std::normal_distribution<double> dist(mean, sd);
  Vector v(n);
  for (auto& x : v)
    x = dist(rng);
  return v;
}

inline Matrix uniform_matrix(std::mt19937_64& rng, Eigen::Index rows,
                             Eigen::Index cols, double lo, double hi)
{
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i)
      m(i, j) = dist(rng);
  return m;
}

//! Heteroscedastic linear location-scale sample y = l1.x + (l2.x) eps with
//! raw regressors uniform on [lo, hi]; l2 must keep the scale positive there.
struct LocationScaleSample
{
  Dataset data;
  Vector eps;
};

inline LocationScaleSample location_scale_sample(std::mt19937_64& rng,
                                                 Eigen::Index n,
                                                 const Vector& l1,
                                                 const Vector& l2,
                                                 double lo = 0.0,
                                                 double hi = 1.0)
{
  const auto k = l1.size();
  LocationScaleSample out;
  out.data.x = uniform_matrix(rng, n, k - 1, lo, hi);
  out.eps = normal_vector(rng, n);
  const DesignMatrix d = make_design(out.data.x, false);
  out.data.y = d.values * l1 +
               ((d.values * l2).array() * out.eps.array()).matrix();
  return out;
}

//! A random well-conditioned instance with positive scale on the sample.
inline LocationScaleSample random_instance(std::mt19937_64& rng,
                                           Eigen::Index n, Eigen::Index k)
{
  Vector l1 = normal_vector(rng, k);
  Vector l2(k);
  std::uniform_real_distribution<double> slope(-0.4, 0.4);
  l2(0) = 1.0 + std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  for (Eigen::Index j = 1; j < k; ++j)
    l2(j) = slope(rng) / static_cast<double>(k);
  return location_scale_sample(rng, n, l1, l2, -1.0, 1.0);
}

inline double max_rel_diff(const Vector& a, const Vector& b)
{
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a(i) - b(i)) /
                              std::max(1.0, std::max(std::abs(a(i)),
                                                     std::abs(b(i)))));
  return worst;
}

} // namespace dualreg::testing
