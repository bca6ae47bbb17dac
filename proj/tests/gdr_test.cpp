#include "test_support.hpp"

#include <dualreg/dgp.hpp>
#include <dualreg/gdr.hpp>
#include <dualreg/solver.hpp>

#include <gtest/gtest.h>

using namespace dualreg;
using dualreg::testing::max_rel_diff;
using dualreg::testing::normal_vector;
using dualreg::testing::random_instance;
using dualreg::testing::uniform_matrix;

namespace {

double bisect(const std::function<double(double)>& g, double lo, double hi)
{
  for (int it = 0; it < 300; ++it) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double h3(double e)
{
  return e * e * e / (1.0 + e * e);
}

double h3_tilde(double e)
{
  return 0.5 * e * e - 0.5 * std::log1p(e * e);
}

struct J3Sample
{
  Vector y;
  Matrix x;
  Vector e;
  Vector gamma;
  Matrix lambda;
};

// y = g1 + g2 e + (l1 + l2 e + l3 h3(e)) x with x ~ U(-1, 1), e ~ N(0, 1)
J3Sample j3_sample(std::uint64_t seed, Eigen::Index n)
{
  std::mt19937_64 rng(seed);
  J3Sample s;
  s.x = uniform_matrix(rng, n, 1, -1.0, 1.0);
  s.e = normal_vector(rng, n);
  s.gamma = Vector(2);
  s.gamma << 2.0, 1.0;
  s.lambda = Matrix(3, 1);
  s.lambda << 0.5, 0.2, 0.3;
  s.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = s.x(i, 0);
    s.y(i) = s.gamma(0) + s.gamma(1) * s.e(i) +
             x * (s.lambda(0, 0) + s.lambda(1, 0) * s.e(i) +
                  s.lambda(2, 0) * h3(s.e(i)));
  }
  return s;
}

} // namespace

TEST(Basis, BuiltinsValidate)
{
  EXPECT_NO_THROW(canonical_basis().validate());
  EXPECT_NO_THROW(rational_cubic_basis().validate());
  EXPECT_EQ(basis_by_name("rational-J3").J(), 3);
  EXPECT_THROW(basis_by_name("cubic"), InvalidSpecError);
}

TEST(Basis, DerivativeCheckCatchesWrongTriple)
{
  auto b = rational_cubic_basis();
  b.terms[2].h_tilde = [](double e) { return e * e; };
  EXPECT_THROW(b.validate(), InvalidSpecError);
  auto c = canonical_basis();
  c.terms[1].h_tilde = [](double e) { return 0.5 * e * e; };
  EXPECT_THROW(c.validate(), InvalidSpecError);
  auto d = rational_cubic_basis();
  d.with_intercept[2] = true;
  EXPECT_THROW(d.validate(), InvalidSpecError);
}

TEST(InvertFoc, IdentityMap)
{
  Vector gamma(2);
  gamma << 0.0, 1.0;
  const Matrix lambda = Matrix::Zero(2, 1);
  Vector x(1);
  x << 0.3;
  EXPECT_NEAR(invert_foc(1.7, x, gamma, lambda, canonical_basis()), 1.7, 1e-14);
}

TEST(InvertFoc, J2MatchesClosedForm)
{
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int t = 0; t < 200; ++t) {
    Vector gamma(2);
    gamma << u(rng), 1.5 + u(rng) * 0.25;
    Matrix lambda(2, 2);
    lambda << u(rng), u(rng), 0.1 * u(rng), 0.1 * u(rng);
    Vector x(2);
    x << u(rng), u(rng);
    const double y = 10.0 * u(rng);
    const double e_closed = (y - gamma(0) - lambda.row(0).dot(x)) /
                            (gamma(1) + lambda.row(1).dot(x));
    EXPECT_NEAR(invert_foc(y, x, gamma, lambda, canonical_basis()), e_closed,
                1e-12 * std::max(1.0, std::abs(e_closed)));
  }
}

TEST(InvertFoc, J3MatchesBisection)
{
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const auto basis = rational_cubic_basis();
  for (int t = 0; t < 200; ++t) {
    Vector gamma(2);
    gamma << 3.0 * u(rng), 1.0;
    Matrix lambda(3, 1);
    lambda << u(rng), 0.2 * u(rng), 0.5 * u(rng);
    Vector x(1);
    x << u(rng);
    const double y = 8.0 * u(rng);
    const double c1 = gamma(0) + lambda(0, 0) * x(0);
    const double c2 = gamma(1) + lambda(1, 0) * x(0);
    const double c3 = lambda(2, 0) * x(0);
    const double oracle = bisect(
      [&](double e) { return c1 + c2 * e + c3 * h3(e) - y; }, -100.0, 100.0);
    EXPECT_NEAR(invert_foc(y, x, gamma, lambda, basis), oracle, 1e-10);
  }
}

TEST(InvertFoc, Errors)
{
  Vector gamma(2);
  gamma << 0.0, -1.0;
  const Matrix lambda = Matrix::Zero(2, 1);
  Vector x(1);
  x << 0.0;
  EXPECT_THROW(invert_foc(1.0, x, gamma, lambda, canonical_basis()),
               NonMonotoneMapError);
  // bounded map: e / 1e9 never reaches y = 1e3 within |e| <= 1e6
  gamma << 0.0, 1e-9;
  EXPECT_THROW(invert_foc(1e3, x, gamma, lambda, canonical_basis()),
               BracketError);
  // negative cubic coefficient large enough to bend the map downwards
  Vector g3(2);
  g3 << 0.0, 0.1;
  Matrix l3(3, 1);
  l3 << 0.0, 0.0, -1.0;
  Vector x1(1);
  x1 << 1.0;
  EXPECT_THROW(invert_foc(5.0, x1, g3, l3, rational_cubic_basis()),
               NonMonotoneMapError);
}

TEST(GdrMoments, ShiftedResidualMovesInterceptRow)
{
  std::mt19937_64 rng(23);
  const auto inst = random_instance(rng, 200, 2);
  const auto design = make_design(inst.data.x, true);
  const DualFit d = fit_dual(inst.data.y, design);
  Vector gamma(2);
  gamma << d.lambda1(0), d.lambda2(0);
  Matrix lambda(2, 1);
  lambda << d.lambda1(1), d.lambda2(1);
  const Vector at = gdr_moments(gamma, lambda, inst.data.y, design,
                                canonical_basis());
  EXPECT_LE(at.cwiseAbs().maxCoeff(), 1e-8);
  // e + c corresponds to shifting the location intercept by -c * scale;
  // with a constant scale that is gamma_1 - c gamma_2
  const double c = 0.3;
  Matrix flat = lambda;
  flat(1, 0) = 0.0;
  const Vector base =
    gdr_moments(gamma, flat, inst.data.y, design, canonical_basis());
  Vector shifted_gamma = gamma;
  shifted_gamma(0) -= c * gamma(1);
  const Vector shifted =
    gdr_moments(shifted_gamma, flat, inst.data.y, design, canonical_basis());
  EXPECT_NEAR(shifted(0) - base(0), c, 1e-12);
}

TEST(GdrMoments, CltScaleAtTruth)
{
  const auto s = j3_sample(24, 2000);
  const auto design = make_design(s.x, true);
  // the sample is generated on raw x; recentering moves the intercepts
  Vector gamma = s.gamma;
  const double xbar = s.x.col(0).mean();
  gamma(0) += s.lambda(0, 0) * xbar;
  gamma(1) += s.lambda(1, 0) * xbar;
  // the h3 term's intercept is dropped, so evaluate at the raw-x truth via
  // the residuals directly
  const Vector e = s.e;
  Vector m(5);
  m << e.mean(), (design.values.col(1).array() * e.array()).mean(),
    (0.5 * (e.array().square() - 1.0)).mean(),
    (design.values.col(1).array() * 0.5 * (e.array().square() - 1.0)).mean(),
    (design.values.col(1).array() * e.unaryExpr(&h3_tilde).array()).mean();
  EXPECT_LE(m.cwiseAbs().maxCoeff(), 5.0 / std::sqrt(2000.0));
  // the same check through gdr_moments when the h3 slope is zero
  J3Sample t = s;
  for (Eigen::Index i = 0; i < t.y.size(); ++i)
    t.y(i) -= s.lambda(2, 0) * s.x(i, 0) * h3(s.e(i));
  Matrix lambda = s.lambda;
  lambda(2, 0) = 0.0;
  const Vector mg = gdr_moments(gamma, lambda, t.y, design,
                                rational_cubic_basis());
  EXPECT_LE(mg.cwiseAbs().maxCoeff(), 5.0 / std::sqrt(2000.0));
}

TEST(FitGdr, J2MatchesDualOnRandomInstances)
{
  std::mt19937_64 rng(25);
  for (int t = 0; t < 20; ++t) {
    const auto inst = random_instance(rng, 150, 3);
    const auto design = make_design(inst.data.x, true);
    const DualFit d = fit_dual(inst.data.y, design);
    GdrOptions opt;
    opt.init = GdrInit::ols;
    const GdrFit g = fit_gdr(inst.data.y, design, canonical_basis(), opt);
    ASSERT_TRUE(g.converged);
    EXPECT_LE(max_rel_diff(g.e, d.e), 1e-8);
    EXPECT_LE(max_rel_diff(g.u, d.u), 1e-8);
    EXPECT_NEAR(inst.data.y.dot(g.e), d.objective_dual,
                1e-8 * std::abs(d.objective_dual));
    EXPECT_NEAR(g.gamma(0), d.lambda1(0), 1e-8 * std::abs(d.lambda1(0)) + 1e-8);
    EXPECT_NEAR(g.gamma(1), d.lambda2(0), 1e-8 * std::abs(d.lambda2(0)) + 1e-8);
  }
}

TEST(FitGdr, J2MatchesDualOnCalibratedDraw)
{
  sim::DgpSpec spec;
  const auto s = sim::draw_sample(spec);
  const auto design = make_design(s.x, true);
  const DualFit d = fit_dual(s.y, design);
  GdrOptions opt;
  opt.init = GdrInit::ols;
  const GdrFit g = fit_gdr(s.dataset(), canonical_basis(), opt);
  Vector mult(4), ref(4);
  mult << g.gamma(0), g.lambda(0, 0), g.gamma(1), g.lambda(1, 0);
  ref << d.lambda1, d.lambda2;
  EXPECT_LE(max_rel_diff(mult, ref), 1e-8);
  EXPECT_LE(max_rel_diff(g.e, d.e), 1e-8);
}

TEST(FitGdr, InterceptOnlyStandardizes)
{
  std::mt19937_64 rng(26);
  const Vector y = normal_vector(rng, 80, 4.0, 2.0);
  const auto design = make_design(Matrix(80, 0), true);
  const GdrFit g = fit_gdr(y, design, canonical_basis());
  const double mean = y.mean();
  const double sd = std::sqrt((y.array() - mean).square().mean());
  EXPECT_NEAR(g.gamma(0), mean, 1e-10);
  EXPECT_NEAR(g.gamma(1), sd, 1e-10);
  EXPECT_LE(max_rel_diff(g.e, ((y.array() - mean) / sd).matrix()), 1e-10);
}

TEST(FitGdr, J3RecoversRepresentation)
{
  const auto s = j3_sample(27, 4000);
  Dataset data;
  data.y = s.y;
  data.x = s.x;
  const auto basis = rational_cubic_basis();
  const GdrFit g = fit_gdr(data, basis);
  ASSERT_TRUE(g.converged);
  EXPECT_LE(g.max_moment, 1e-8);
  // stationarity recomputed independently
  const auto design = make_design(s.x, true);
  EXPECT_LE(gdr_moments(g.gamma, g.lambda, s.y, design, basis)
              .cwiseAbs()
              .maxCoeff(),
            1e-8);
  // slopes near the generating values
  EXPECT_NEAR(g.lambda(0, 0), 0.5, 0.1);
  EXPECT_NEAR(g.lambda(1, 0), 0.2, 0.1);
  EXPECT_NEAR(g.lambda(2, 0), 0.3, 0.15);
  // residuals close to the generating shocks
  EXPECT_LE((g.e - s.e).cwiseAbs().mean(), 0.1);
  // reconstruction and monotonicity
  for (Eigen::Index i = 0; i < s.y.size(); ++i) {
    const Vector x = s.x.row(i).transpose();
    EXPECT_NEAR(gdr_reconstruct(g, basis, x, g.e(i)), s.y(i),
                1e-10 * std::max(1.0, std::abs(s.y(i))));
    EXPECT_GT(gdr_slope(g, basis, x, g.e(i)), 0.0);
  }
}

TEST(FitGdr, MonotoneWithinIdenticalRows)
{
  std::mt19937_64 rng(28);
  Matrix x(300, 1);
  for (Eigen::Index i = 0; i < 300; ++i)
    x(i, 0) = static_cast<double>(i % 3) - 1.0;
  const Vector e = normal_vector(rng, 300);
  Vector y(300);
  for (Eigen::Index i = 0; i < 300; ++i)
    y(i) = 1.0 + e(i) + x(i, 0) * (0.5 + 0.2 * e(i) + 0.3 * h3(e(i)));
  const auto g = fit_gdr(y, make_design(x, false), rational_cubic_basis());
  for (Eigen::Index a = 0; a < 300; ++a)
    for (Eigen::Index b = 0; b < 300; ++b)
      if (x(a, 0) == x(b, 0) && y(a) < y(b))
        EXPECT_LT(g.e(a), g.e(b));
}

TEST(FitGdr, CenteringConsistency)
{
  const auto s = j3_sample(29, 500);
  Dataset a;
  a.y = s.y;
  a.x = s.x;
  Dataset b = a;
  b.x.array() += 7.5;
  const auto basis = rational_cubic_basis();
  const auto fa = fit_gdr(a, basis);
  const auto fb = fit_gdr(b, basis);
  EXPECT_LE((fa.e - fb.e).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE((fa.u - fb.u).cwiseAbs().maxCoeff(), 1e-8);
  Vector xa(1), xb(1);
  xa << 0.25;
  xb << 7.75;
  EXPECT_LE(max_rel_diff(gdr_coefficients(fa, xa), gdr_coefficients(fb, xb)),
            1e-8);
}

TEST(FitGdr, DegenerateBasisIsSingular)
{
  const auto s = j3_sample(30, 300);
  BasisSpec basis = rational_cubic_basis();
  basis.terms[2] = linear_term();
  Dataset data;
  data.y = s.y;
  data.x = s.x;
  EXPECT_THROW(fit_gdr(data, basis), SingularJacobianError);
}

TEST(FitGdr, NotConvergedCarriesBest)
{
  const auto s = j3_sample(31, 300);
  Dataset data;
  data.y = s.y;
  data.x = s.x;
  GdrOptions opt;
  opt.max_iter = 1;
  opt.init = GdrInit::ols;
  try {
    fit_gdr(data, rational_cubic_basis(), opt);
    FAIL() << "expected NotConvergedError";
  } catch (const NotConvergedError<GdrFit>& err) {
    EXPECT_EQ(err.best().iterations, 1);
    EXPECT_FALSE(err.best().converged);
  }
}
