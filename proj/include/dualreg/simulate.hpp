#pragma once

#include "data.hpp"
#include "dgp.hpp"
#include "errors.hpp"
#include "location_scale.hpp"
#include "quantreg.hpp"
#include "solver.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace dualreg::sim {

//! Empirical L^p distance ((1/n) sum |a_i - b_i|^p)^(1/p); p = infinity
//! gives the maximum absolute difference.
inline double lp_error(const Vector& u_hat, const Vector& u_true, double p)
{
  if (u_hat.size() != u_true.size())
    throw DataError("lp_error: length mismatch (" +
                    std::to_string(u_hat.size()) + " vs " +
                    std::to_string(u_true.size()) + ")");
  if (u_hat.size() == 0)
    throw DataError("lp_error: empty input");
  const Eigen::ArrayXd d = (u_hat - u_true).array().abs();
  if (std::isinf(p) && p > 0)
    return d.maxCoeff();
  if (p == 1.0)
    return d.mean();
  if (p == 2.0)
    return std::sqrt(d.square().mean());
  throw DomainError("lp_error: p must be 1, 2 or infinity");
}

//! Square root of the mean absolute error across replications.
inline double rmae(std::span<const double> errors)
{
  if (errors.empty())
    throw DataError("rmae: no replications");
  double total = 0.0;
  for (double e : errors)
    total += std::abs(e);
  return std::sqrt(total / static_cast<double>(errors.size()));
}

enum class Method
{
  dual,
  rearranged_qr,
  qr_coefficients
};

inline const char* to_string(Method m)
{
  switch (m) {
    case Method::dual:
      return "dual";
    case Method::rearranged_qr:
      return "rearranged_qr";
    case Method::qr_coefficients:
      return "qr_coefficients";
  }
  return "?";
}

inline Method method_from_string(const std::string& s)
{
  if (s == "dual")
    return Method::dual;
  if (s == "rearranged_qr")
    return Method::rearranged_qr;
  if (s == "qr_coefficients")
    return Method::qr_coefficients;
  throw InvalidSpecError("unknown method '" + s +
                         "' (known: dual, rearranged_qr, qr_coefficients)");
}

struct StudyConfig
{
  DgpSpec dgp; //!< n and seed are overridden per replication
  std::vector<Eigen::Index> sample_sizes{ 100, 235, 500, 1000 };
  int replications = 500;
  std::uint64_t seed = 20131025;
  std::vector<Method> methods{ Method::dual, Method::rearranged_qr,
                               Method::qr_coefficients };
  int threads = 1;
  //! quantile indices for coefficient errors and bands
  std::vector<double> coefficient_taus{ 0.05, 0.1,  0.15, 0.2,  0.25,
                                        0.3,  0.35, 0.4,  0.45, 0.5,
                                        0.55, 0.6,  0.65, 0.7,  0.75,
                                        0.8,  0.85, 0.9,  0.95 };
  //! subset reported in the RMAE tables
  std::vector<double> rmae_taus{ 0.1, 0.25, 0.5, 0.75, 0.9 };
  int qr_grid_points = 99;
  double epsilon = 0.001;
  int u_grid_size = 999;
  double max_failure_rate = 0.01;

  bool uses(Method m) const
  {
    return std::find(methods.begin(), methods.end(), m) != methods.end();
  }

  void validate() const
  {
    if (sample_sizes.empty())
      throw InvalidSpecError("no sample sizes");
    for (auto n : sample_sizes) {
      DgpSpec s = dgp;
      s.n = n;
      s.validate();
    }
    if (replications < 1)
      throw InvalidSpecError("replications must be positive");
    if (threads < 1)
      throw InvalidSpecError("threads must be positive");
    if (methods.empty())
      throw InvalidSpecError("no methods selected");
    validate_tau_grid(coefficient_taus);
    for (double t : rmae_taus)
      if (tau_position(t) < 0)
        throw InvalidSpecError("RMAE quantile index " + std::to_string(t) +
                               " is not among the coefficient indices");
    if (qr_grid_points < 2)
      throw InvalidSpecError("rearrangement grid needs at least two points");
    if (!(epsilon > 0.0 && epsilon < 0.5))
      throw InvalidSpecError("epsilon must lie in (0, 0.5)");
    if (u_grid_size < 1)
      throw InvalidSpecError("u grid needs at least one point");
    if (!(max_failure_rate >= 0.0 && max_failure_rate < 1.0))
      throw InvalidSpecError("max_failure_rate must lie in [0, 1)");
  }

  Eigen::Index tau_position(double tau) const
  {
    for (std::size_t r = 0; r < coefficient_taus.size(); ++r)
      if (std::abs(coefficient_taus[r] - tau) < 1e-12)
        return static_cast<Eigen::Index>(r);
    return -1;
  }
};

//! One replication. Errors are estimate minus truth; entries for methods
//! not run are NaN. Coefficient matrices are T x 2 (intercept, slope).
struct RepRecord
{
  Eigen::Index n = 0;
  int rep = 0;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string failure;
  double l1_dr = std::numeric_limits<double>::quiet_NaN();
  double l1_qr = std::numeric_limits<double>::quiet_NaN();
  double l2_dr = std::numeric_limits<double>::quiet_NaN();
  double l2_qr = std::numeric_limits<double>::quiet_NaN();
  double linf_dr = std::numeric_limits<double>::quiet_NaN();
  double linf_qr = std::numeric_limits<double>::quiet_NaN();
  Matrix coef_err_dr;
  Matrix coef_err_qr;
};

//! Table 1 row; L^p values are means over successful replications.
struct LpSummary
{
  Eigen::Index n = 0;
  int used = 0;
  int failed = 0;
  double l1_dr = 0, l1_qr = 0, l2_dr = 0, l2_qr = 0, linf_dr = 0, linf_qr = 0;

  double l1_ratio() const { return 100.0 * l1_dr / l1_qr; }
  double l2_ratio() const { return 100.0 * l2_dr / l2_qr; }
  double linf_ratio() const { return 100.0 * linf_dr / linf_qr; }
};

//! Tables 2-3 row: RMAE per tau for one n, method and coefficient.
struct RmaeRow
{
  Eigen::Index n = 0;
  std::string method;
  int coefficient = 0; //!< 0 intercept, 1 slope
  std::vector<double> taus;
  std::vector<double> values;
};

struct BandRow
{
  Eigen::Index n = 0;
  std::string method;
  int coefficient = 0;
  double tau = 0, truth = 0, median = 0, q05 = 0, q95 = 0;
};

struct SimReport
{
  StudyConfig config;
  std::vector<RepRecord> per_rep; //!< ordered by (n index, rep)
  std::vector<LpSummary> lp;
  std::vector<RmaeRow> rmae_rows;
  std::vector<BandRow> bands;
};

class StudyAbortedError : public Error
{
public:
  using Error::Error;
};

//! Sample quantile with linear interpolation between order statistics.
inline double sample_quantile(std::vector<double> v, double p)
{
  if (v.empty())
    return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double h = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

//! Draw, fit and score one replication.
inline RepRecord run_replication(const StudyConfig& cfg, Eigen::Index n,
                                 int rep)
{
  RepRecord rec;
  rec.n = n;
  rec.rep = rep;
  rec.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(n),
                         static_cast<std::uint64_t>(rep));
  const auto t_count = static_cast<Eigen::Index>(cfg.coefficient_taus.size());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  rec.coef_err_dr = Matrix::Constant(t_count, 2, nan);
  rec.coef_err_qr = Matrix::Constant(t_count, 2, nan);

  DgpSpec spec = cfg.dgp;
  spec.n = n;
  spec.seed = rec.seed;
  const Sample s = draw_sample(spec);
  Matrix truth(t_count, 2);
  for (Eigen::Index t = 0; t < t_count; ++t)
    truth.row(t) =
      spec.true_coefficients(cfg.coefficient_taus[static_cast<std::size_t>(t)])
        .transpose();

  try {
    if (cfg.uses(Method::dual)) {
      const DesignMatrix centered = make_design(s.x, true);
      SolverOptions opt;
      opt.throw_on_max_iter = false;
      DualFit fit = fit_dual(s.y, centered, opt);
      if (!fit.converged)
        throw MaxIterationsError("dual regression did not converge",
                                 fit.iterations);
      fit.lambda1 = uncenter_coefficients(fit.lambda1, centered);
      fit.lambda2 = uncenter_coefficients(fit.lambda2, centered);
      rec.l1_dr = lp_error(fit.u, s.u_true, 1.0);
      rec.l2_dr = lp_error(fit.u, s.u_true, 2.0);
      rec.linf_dr =
        lp_error(fit.u, s.u_true, std::numeric_limits<double>::infinity());
      rec.coef_err_dr =
        quantile_coefficients(fit, cfg.coefficient_taus) - truth;
    }
    const DesignMatrix design = make_design(s.x, false);
    if (cfg.uses(Method::rearranged_qr)) {
      QrFit qr = qr_coefficient_process(
        s.y, design, rearrangement_tau_grid(cfg.qr_grid_points, cfg.epsilon));
      qr.epsilon = cfg.epsilon;
      qr.u_grid_size = cfg.u_grid_size;
      const RearrangedCdf cdf(qr);
      Vector u(n);
      for (Eigen::Index i = 0; i < n; ++i)
        u(i) = cdf(design.row(i).transpose(), s.y(i));
      rec.l1_qr = lp_error(u, s.u_true, 1.0);
      rec.l2_qr = lp_error(u, s.u_true, 2.0);
      rec.linf_qr =
        lp_error(u, s.u_true, std::numeric_limits<double>::infinity());
    }
    if (cfg.uses(Method::qr_coefficients)) {
      const QrFit qr = qr_coefficient_process(s.y, design, cfg.coefficient_taus);
      rec.coef_err_qr = qr.coefficients - truth;
    }
  } catch (const Error& err) {
    rec.ok = false;
    rec.failure = err.what();
  }
  return rec;
}

namespace detail {

inline double mean_of(const std::vector<RepRecord>& recs,
                      double RepRecord::*field)
{
  double total = 0.0;
  for (const auto& r : recs)
    total += r.*field;
  return recs.empty() ? std::numeric_limits<double>::quiet_NaN()
                      : total / static_cast<double>(recs.size());
}

} // namespace detail

//! Table 1, RMAE tables and coefficient bands from the per-replication
//! records; failed replications are excluded.
inline void summarize(SimReport& report)
{
  const auto& cfg = report.config;
  report.lp.clear();
  report.rmae_rows.clear();
  report.bands.clear();
  for (auto n : cfg.sample_sizes) {
    std::vector<RepRecord> used;
    int failed = 0;
    for (const auto& r : report.per_rep) {
      if (r.n != n)
        continue;
      if (r.ok)
        used.push_back(r);
      else
        ++failed;
    }
    LpSummary lp;
    lp.n = n;
    lp.used = static_cast<int>(used.size());
    lp.failed = failed;
    lp.l1_dr = detail::mean_of(used, &RepRecord::l1_dr);
    lp.l1_qr = detail::mean_of(used, &RepRecord::l1_qr);
    lp.l2_dr = detail::mean_of(used, &RepRecord::l2_dr);
    lp.l2_qr = detail::mean_of(used, &RepRecord::l2_qr);
    lp.linf_dr = detail::mean_of(used, &RepRecord::linf_dr);
    lp.linf_qr = detail::mean_of(used, &RepRecord::linf_qr);
    report.lp.push_back(lp);

    DgpSpec spec = cfg.dgp;
    const struct
    {
      const char* name;
      Matrix RepRecord::*field;
      bool on;
    } methods[] = {
      { "DR", &RepRecord::coef_err_dr, cfg.uses(Method::dual) },
      { "QR", &RepRecord::coef_err_qr, cfg.uses(Method::qr_coefficients) },
    };
    for (const auto& m : methods) {
      if (!m.on)
        continue;
      for (int c = 0; c < 2; ++c) {
        RmaeRow row;
        row.n = n;
        row.method = m.name;
        row.coefficient = c;
        for (double tau : cfg.rmae_taus) {
          const auto t = cfg.tau_position(tau);
          std::vector<double> errs;
          for (const auto& r : used)
            errs.push_back((r.*(m.field))(t, c));
          row.taus.push_back(tau);
          row.values.push_back(errs.empty()
                                 ? std::numeric_limits<double>::quiet_NaN()
                                 : rmae(errs));
        }
        report.rmae_rows.push_back(row);
        for (std::size_t t = 0; t < cfg.coefficient_taus.size(); ++t) {
          const double tau = cfg.coefficient_taus[t];
          const double truth = spec.true_coefficients(tau)(c);
          std::vector<double> est;
          for (const auto& r : used)
            est.push_back(truth +
                          (r.*(m.field))(static_cast<Eigen::Index>(t), c));
          BandRow b;
          b.n = n;
          b.method = m.name;
          b.coefficient = c;
          b.tau = tau;
          b.truth = truth;
          b.median = sample_quantile(est, 0.5);
          b.q05 = sample_quantile(est, 0.05);
          b.q95 = sample_quantile(est, 0.95);
          report.bands.push_back(b);
        }
      }
    }
  }
}

//! Runs every (n, replication) task on `config.threads` workers. Records
//! are stored by task index, so the report does not depend on scheduling.
//! Throws StudyAbortedError when more than max_failure_rate of the
//! replications at any sample size fail.
inline SimReport run_study(const StudyConfig& config)
{
  config.validate();
  SimReport report;
  report.config = config;
  const auto sizes = config.sample_sizes.size();
  const auto reps = static_cast<std::size_t>(config.replications);
  report.per_rep.resize(sizes * reps);

  std::atomic<std::size_t> next{ 0 };
  std::exception_ptr fatal;
  std::mutex fatal_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t task = next.fetch_add(1);
      if (task >= report.per_rep.size())
        return;
      try {
        report.per_rep[task] = run_replication(
          config, config.sample_sizes[task / reps], static_cast<int>(task % reps));
      } catch (...) {
        std::lock_guard<std::mutex> lock(fatal_mutex);
        if (!fatal)
          fatal = std::current_exception();
        next.store(report.per_rep.size());
      }
    }
  };
  const auto workers = static_cast<std::size_t>(
    std::min<std::size_t>(static_cast<std::size_t>(config.threads),
                          report.per_rep.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < workers; ++t)
    pool.emplace_back(worker);
  worker();
  for (auto& t : pool)
    t.join();
  if (fatal)
    std::rethrow_exception(fatal);

  summarize(report);
  for (const auto& lp : report.lp) {
    const double rate =
      static_cast<double>(lp.failed) / static_cast<double>(config.replications);
    if (rate > config.max_failure_rate)
      throw StudyAbortedError(
        "study aborted: " + std::to_string(lp.failed) + " of " +
        std::to_string(config.replications) +
        " replications failed at n=" + std::to_string(lp.n));
  }
  return report;
}

} // namespace dualreg::sim
