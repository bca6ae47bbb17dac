#pragma once

#include "data.hpp"
#include "errors.hpp"
#include "linalg.hpp"
#include "normal.hpp"

#include <cmath>
#include <cstdint>
#include <random>

namespace dualreg::sim {

//! splitmix64 finalizer; used to derive independent stream seeds from a
//! master seed and a counter.
inline std::uint64_t mix_seed(std::uint64_t x)
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                 std::uint64_t counter)
{
  return mix_seed(mix_seed(master ^ mix_seed(stream)) + counter);
}

//! Uniform on the open interval (0, 1) from 53 random bits. Unlike
//! std::uniform_real_distribution the mapping is fixed, so draws are
//! identical across standard libraries.
class Stream
{
public:
  explicit Stream(std::uint64_t seed)
    : engine_(seed)
  {}

  double uniform()
  {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() { return stats::qnorm(uniform()); }

private:
  std::mt19937_64 engine_;
};

//! Gaussian location-scale design calibrated to Engel's food expenditure
//! data: y = l11 + l21 x + (l12 + l22 x) eps with x left-truncated normal.
//! `location` holds (l11, l21) and `scale` holds (l12, l22).
struct DgpSpec
{
  Eigen::Vector2d location{ 86.35, 0.55 };
  Eigen::Vector2d scale{ -21.39, 0.12 };
  double x_mean = 982.47;
  double x_sd = 519.85;
  double truncation_point = 277.0;
  Eigen::Index n = 235;
  std::uint64_t seed = 20131025;

  double sigma(double x) const { return scale(0) + scale(1) * x; }

  //! beta_o(u) = location + scale * Phi^{-1}(u)
  Eigen::Vector2d true_coefficients(double u) const
  {
    return location + scale * stats::qnorm(u);
  }

  void validate() const
  {
    if (n < 4)
      throw InvalidSpecError("DGP sample size must be at least 4");
    if (!(x_sd > 0.0))
      throw InvalidSpecError("parent normal sd must be positive");
    if (scale(1) < 0.0 || !(sigma(truncation_point) > 0.0))
      throw InvalidSpecError(
        "scale function is not positive on the regressor support");
  }
};

struct Sample
{
  Vector y;
  Vector x;
  Vector e_true;
  Vector u_true;

  Dataset dataset() const
  {
    Dataset d;
    d.y = y;
    d.x = x;
    d.outcome_name = "y";
    d.regressor_names = { "x" };
    return d;
  }
};

//! One draw from the design; x by inverse CDF on a uniform restricted to
//! [Phi((c - mu) / sd), 1). Deterministic given spec.seed.
inline Sample draw_sample(const DgpSpec& spec)
{
  spec.validate();
  Stream stream(spec.seed);
  const double p0 =
    stats::pnorm((spec.truncation_point - spec.x_mean) / spec.x_sd);
  Sample s;
  s.x.resize(spec.n);
  s.e_true.resize(spec.n);
  for (Eigen::Index i = 0; i < spec.n; ++i) {
    double p = p0 + (1.0 - p0) * stream.uniform();
    p = std::min(p, std::nextafter(1.0, 0.0));
    s.x(i) = std::max(spec.truncation_point,
                      spec.x_mean + spec.x_sd * stats::qnorm(p));
    s.e_true(i) = stream.normal();
  }
  s.y = (spec.location(0) + spec.location(1) * s.x.array() +
         (spec.scale(0) + spec.scale(1) * s.x.array()) * s.e_true.array())
          .matrix();
  s.u_true = s.e_true.unaryExpr([](double e) { return stats::pnorm(e); });
  return s;
}

} // namespace dualreg::sim
