#pragma once

#include <boost/math/distributions/normal.hpp>

namespace dualreg::stats {

//! standard normal cdf
inline double pnorm(double x)
{
  return boost::math::cdf(boost::math::normal_distribution<double>(), x);
}

//! standard normal quantile; p must lie in (0, 1)
inline double qnorm(double p)
{
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

//! standard normal density
inline double dnorm(double x)
{
  return boost::math::pdf(boost::math::normal_distribution<double>(), x);
}

} // namespace dualreg::stats
