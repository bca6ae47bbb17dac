#include "test_support.hpp"

#include <dualreg/dgp.hpp>
#include <dualreg/quantreg.hpp>

#include <gtest/gtest.h>

#include <chrono>
#include <numeric>

using namespace dualreg;
using dualreg::testing::normal_vector;
using dualreg::testing::uniform_matrix;

namespace {

// minimum check loss over all interpolating k-subsets
double oracle_loss(const Vector& y, const Matrix& x, double tau)
{
  const auto n = x.rows();
  const auto k = x.cols();
  std::vector<int> pick(static_cast<std::size_t>(k));
  std::iota(pick.begin(), pick.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  for (;;) {
    Matrix xh(k, k);
    Vector yh(k);
    for (Eigen::Index p = 0; p < k; ++p) {
      xh.row(p) = x.row(pick[static_cast<std::size_t>(p)]);
      yh(p) = y(pick[static_cast<std::size_t>(p)]);
    }
    Eigen::FullPivLU<Matrix> lu(xh);
    if (lu.isInvertible())
      best = std::min(best, check_loss(y, x, lu.solve(yh), tau));
    Eigen::Index p = k - 1;
    while (p >= 0 && pick[static_cast<std::size_t>(p)] == n - k + p)
      --p;
    if (p < 0)
      return best;
    ++pick[static_cast<std::size_t>(p)];
    for (Eigen::Index q = p + 1; q < k; ++q)
      pick[static_cast<std::size_t>(q)] = pick[static_cast<std::size_t>(q - 1)] + 1;
  }
}

QrFit fit_dgp_process(std::uint64_t seed, Eigen::Index n, int points = 99)
{
  sim::DgpSpec spec;
  spec.n = n;
  spec.seed = seed;
  const auto s = sim::draw_sample(spec);
  const auto design = make_design(s.x, false);
  const auto grid = rearrangement_tau_grid(points);
  return qr_coefficient_process(s.y, design, grid);
}

} // namespace

TEST(FitQr, InterceptOnlyMedian)
{
  Vector y(3);
  y << 1, 2, 9;
  const auto d = make_design(Matrix(3, 0), false);
  EXPECT_NEAR(fit_qr(y, d, 0.5)(0), 2.0, 1e-12);
}

TEST(FitQr, MatchesEnumerationOracle)
{
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> kdist(1, 3);
  std::uniform_real_distribution<double> tdist(0.05, 0.95);
  for (int rep = 0; rep < 200; ++rep) {
    const int k = kdist(rng);
    const int n = std::uniform_int_distribution<int>(2 * k + 2, 30)(rng);
    const double tau = tdist(rng);
    const auto d = make_design(uniform_matrix(rng, n, k - 1, -2.0, 2.0), false);
    const Vector y = d.values * normal_vector(rng, k) + normal_vector(rng, n);
    const auto sol = fit_qr_exact(y, d.values, tau);
    const double oracle = oracle_loss(y, d.values, tau);
    EXPECT_LE(std::abs(sol.loss - oracle), 1e-9) << "instance " << rep;
    EXPECT_NEAR(check_loss(y, d.values, sol.coef, tau), sol.loss, 1e-9);
  }
}

TEST(FitQr, WarmStartReachesSameLoss)
{
  std::mt19937_64 rng(12);
  const auto d = make_design(uniform_matrix(rng, 25, 2, 0.0, 1.0), false);
  const Vector y = normal_vector(rng, 25);
  const auto a = fit_qr_exact(y, d.values, 0.3);
  const auto b = fit_qr_exact(y, d.values, 0.8, &a.basis);
  EXPECT_NEAR(b.loss, oracle_loss(y, d.values, 0.8), 1e-9);
}

TEST(FitQr, SubgradientCondition)
{
  std::mt19937_64 rng(13);
  for (double tau : { 0.1, 0.5, 0.75 }) {
    const auto d = make_design(uniform_matrix(rng, 300, 2, -1.0, 3.0), false);
    const Vector y = d.values * Vector::Ones(3) + normal_vector(rng, 300);
    const Vector b = fit_qr(y, d, tau);
    const Vector r = y - d.values * b;
    Vector g = Vector::Zero(3);
    for (Eigen::Index i = 0; i < 300; ++i)
      g += d.values.row(i).transpose() * (tau - (r(i) < 0.0 ? 1.0 : 0.0));
    const double bound = 3.0 * d.values.cwiseAbs().maxCoeff();
    EXPECT_LE(g.cwiseAbs().maxCoeff(), bound);
  }
}

TEST(FitQr, Errors)
{
  Matrix raw(6, 2);
  raw << 1, 2, 2, 4, 3, 6, 4, 8, 5, 10, 6, 12;
  const auto d = make_design(raw, false);
  const Vector y = Vector::LinSpaced(6, 0, 5);
  EXPECT_THROW(fit_qr(y, d, 0.5), DesignRankError);
  const auto ok = make_design(raw.leftCols(1), false);
  EXPECT_THROW(fit_qr(y, ok, 0.0), DomainError);
  EXPECT_THROW(fit_qr(y, ok, 1.0), DomainError);
}

TEST(FitQr, CalibratedDgpLowerQuartile)
{
  sim::DgpSpec spec;
  spec.n = 1000;
  const int reps = 60;
  Matrix est(reps, 2);
  for (int r = 0; r < reps; ++r) {
    spec.seed = sim::derive_seed(99, 0, static_cast<std::uint64_t>(r));
    const auto s = sim::draw_sample(spec);
    est.row(r) = fit_qr(s.y, make_design(s.x, false), 0.25).transpose();
  }
  const Eigen::Vector2d truth = spec.true_coefficients(0.25);
  for (int j = 0; j < 2; ++j) {
    const double mean = est.col(j).mean();
    const double sd = std::sqrt(
      (est.col(j).array() - mean).square().sum() / (reps - 1.0));
    EXPECT_LE(std::abs(mean - truth(j)), 3.0 * sd / std::sqrt(double(reps)))
      << "coefficient " << j;
  }
}

TEST(QrProcess, LocationModelSlopesConstant)
{
  std::mt19937_64 rng(14);
  const Eigen::Index n = 2000;
  const auto d = make_design(uniform_matrix(rng, n, 1, 0.0, 10.0), false);
  const Vector y =
    (1.0 + 2.0 * d.values.col(1).array()).matrix() + normal_vector(rng, n);
  const std::vector<double> grid{ 0.1, 0.25, 0.5, 0.75, 0.9 };
  const auto fit = qr_coefficient_process(y, d, grid);
  for (Eigen::Index r = 0; r < fit.taus.size(); ++r)
    EXPECT_NEAR(fit.coefficients(r, 1), 2.0, 0.05);
  // intercept tracks the normal quantile
  for (Eigen::Index r = 0; r < fit.taus.size(); ++r)
    EXPECT_NEAR(fit.coefficients(r, 0), 1.0 + stats::qnorm(fit.taus(r)), 0.25);
}

TEST(QrProcess, TracksTrueCoefficientsOnCalibratedDgp)
{
  const auto fit = fit_dgp_process(5, 2000, 19);
  sim::DgpSpec spec;
  for (Eigen::Index r = 1; r + 1 < fit.taus.size(); ++r) {
    const Eigen::Vector2d truth = spec.true_coefficients(fit.taus(r));
    EXPECT_NEAR(fit.coefficients(r, 0), truth(0), 25.0);
    EXPECT_NEAR(fit.coefficients(r, 1), truth(1), 0.03);
  }
}

TEST(QrProcess, GridValidation)
{
  std::mt19937_64 rng(15);
  const auto d = make_design(uniform_matrix(rng, 20, 1, 0.0, 1.0), false);
  const Vector y = normal_vector(rng, 20);
  EXPECT_THROW(qr_coefficient_process(y, d, std::vector<double>{}), GridError);
  EXPECT_THROW(qr_coefficient_process(y, d, std::vector<double>{ 0.5, 0.4 }),
               GridError);
  EXPECT_THROW(qr_coefficient_process(y, d, std::vector<double>{ 0.5, 1.0 }),
               GridError);
}

TEST(QrProcess, FailureNamesTauIndex)
{
  Matrix raw(6, 1);
  raw << 1, 1, 1, 1, 1, 1;
  const auto d = make_design(raw, false);
  const Vector y = Vector::LinSpaced(6, 0, 5);
  try {
    qr_coefficient_process(y, d, std::vector<double>{ 0.5 });
    FAIL() << "expected failure";
  } catch (const Error& err) {
    EXPECT_NE(std::string(err.what()).find("tau index 0"), std::string::npos);
  }
}

TEST(QrProcess, RuntimeBudget)
{
  const auto start = std::chrono::steady_clock::now();
  const auto fit = fit_dgp_process(7, 235, 99);
  const double secs = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - start).count();
  EXPECT_EQ(fit.coefficients.rows(), 99);
  EXPECT_LT(secs, 5.0);
}

TEST(TauGrid, Helpers)
{
  const auto g = rearrangement_tau_grid(99, 0.001);
  EXPECT_EQ(g.size(), 99u);
  EXPECT_DOUBLE_EQ(g.front(), 0.001);
  EXPECT_DOUBLE_EQ(g.back(), 0.999);
  const auto p = parse_tau_grid("0.1:0.9:0.1");
  ASSERT_EQ(p.size(), 9u);
  EXPECT_NEAR(p[8], 0.9, 1e-12);
  EXPECT_THROW(parse_tau_grid("0.1:0.9"), GridError);
  EXPECT_THROW(parse_tau_grid("0:0.5:0.1"), GridError);
  EXPECT_THROW(parse_tau_grid("a:b:c"), GridError);
}

TEST(Rearranged, Clamps)
{
  const auto fit = fit_dgp_process(8, 235);
  Vector x(2);
  x << 1.0, 1000.0;
  EXPECT_DOUBLE_EQ(rearranged_cdf(fit, x, -1e9), 0.001);
  EXPECT_NEAR(rearranged_cdf(fit, x, 1e9), 0.999, 1e-12);
}

TEST(Rearranged, MonotoneInY)
{
  const auto fit = fit_dgp_process(9, 235);
  const RearrangedCdf cdf(fit);
  std::mt19937_64 rng(16);
  std::uniform_real_distribution<double> xs(277.0, 3000.0), ys(-500.0, 2500.0);
  int violations = 0;
  for (int t = 0; t < 1000; ++t) {
    Vector x(2);
    x << 1.0, xs(rng);
    double a = ys(rng), b = ys(rng);
    if (a > b)
      std::swap(a, b);
    if (cdf(x, a) > cdf(x, b))
      ++violations;
  }
  EXPECT_EQ(violations, 0);
}

TEST(Rearranged, InverseConsistencyAtMedian)
{
  const auto fit = fit_dgp_process(10, 235);
  const RearrangedCdf cdf(fit);
  const auto mid = static_cast<Eigen::Index>(fit.taus.size() / 2);
  ASSERT_NEAR(fit.taus(mid), 0.5, 1e-12);
  int checked = 0;
  for (double xv : { 500.0, 1000.0, 1500.0 }) {
    Vector x(2);
    x << 1.0, xv;
    const Vector curve = cdf.quantile_curve(x);
    bool sorted = std::is_sorted(curve.begin(), curve.end());
    if (!sorted)
      continue;
    const double y = fit.coefficients.row(mid).dot(x);
    EXPECT_NEAR(cdf(x, y), 0.5, cdf.weight());
    ++checked;
  }
  EXPECT_GT(checked, 0);
}

TEST(Rearranged, GridMustCoverIntegrationRange)
{
  QrFit fit;
  fit.taus = Vector::LinSpaced(9, 0.1, 0.9);
  fit.coefficients = Matrix::Ones(9, 2);
  Vector x(2);
  x << 1.0, 1.0;
  EXPECT_THROW(rearranged_cdf(fit, x, 0.0), GridError);
}

TEST(Rearranged, QuantileFunctionInvertsCdf)
{
  const auto fit = fit_dgp_process(17, 235);
  const RearrangedCdf cdf(fit);
  Vector x(2);
  x << 1.0, 900.0;
  const std::vector<double> levels{ 0.1, 0.5, 0.9 };
  const Vector q = rearranged_quantiles(cdf, x, levels, -200.0, 1500.0, 512);
  const double step = 1700.0 / 511.0;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const auto li = static_cast<Eigen::Index>(l);
    EXPECT_GE(cdf(x, q(li)), levels[l]);
    EXPECT_LT(cdf(x, q(li) - step), levels[l]);
  }
  EXPECT_LT(q(0), q(1));
  EXPECT_LT(q(1), q(2));
}
