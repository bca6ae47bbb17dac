#pragma once

#include "../data.hpp"
#include "../gdr.hpp"
#include "../iv.hpp"
#include "../location_scale.hpp"
#include "../quantreg.hpp"
#include "../simulate.hpp"
#include "../solver.hpp"
#include "csv.hpp"
#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace dualreg::io {

namespace fs = std::filesystem;

//! Everything a command needs. Built from a JSON config file plus flag
//! overrides.
struct RunConfig
{
  std::string command;
  std::string input_csv;
  std::string outcome_column;
  std::vector<std::string> regressor_columns;
  std::vector<std::string> instrument_columns;
  bool center = false;
  SolverOptions solver;
  std::string basis = "canonical-J2";
  IvMethod iv_method = IvMethod::direct;
  bool pin_higher_slopes = false;
  std::vector<double> tau_grid = rearrangement_tau_grid(99, 0.001);
  double epsilon = 0.001;
  int u_grid_size = 999;
  int y_grid_points = 512;
  int x_grid_points = 50;
  std::string output_dir = ".";
  sim::StudyConfig study;

  void validate() const
  {
    static const std::set<std::string> commands{ "fit", "gdr", "iv", "qr",
                                                 "simulate" };
    if (!commands.count(command))
      throw InvalidSpecError("unknown command '" + command + "'");
    if (command != "simulate") {
      if (input_csv.empty())
        throw InvalidSpecError("config field 'input_csv' is required for '" +
                               command + "'");
      if (outcome_column.empty())
        throw InvalidSpecError(
          "config field 'outcome_column' is required for '" + command + "'");
    }
    if (command == "iv" && instrument_columns.empty())
      throw InvalidSpecError(
        "config field 'instrument_columns' is required for 'iv'");
    solver.validate();
    validate_tau_grid(tau_grid);
    if (!(epsilon > 0.0 && epsilon < 0.5))
      throw InvalidSpecError("'rearrangement.epsilon' must lie in (0, 0.5)");
    if (u_grid_size < 1 || y_grid_points < 2 || x_grid_points < 2)
      throw InvalidSpecError("grid sizes must be at least 2 (u grid at least 1)");
    if (command == "gdr")
      basis_by_name(basis);
    if (command == "simulate")
      study.validate();
  }
};

namespace detail {

inline std::string field_path(const std::string& parent, const std::string& key)
{
  return parent.empty() ? key : parent + "." + key;
}

inline void check_keys(const Json& obj, const std::string& where,
                       const std::set<std::string>& allowed)
{
  if (!obj.is_object())
    throw InvalidSpecError("config field '" + where + "' must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw InvalidSpecError("unknown config field '" +
                             field_path(where, it.key()) + "'");
}

template<class T>
T get_field(const Json& obj, const std::string& key, const std::string& where)
{
  try {
    return obj.at(key).get<T>();
  } catch (const Json::exception&) {
    throw InvalidSpecError("config field '" + field_path(where, key) +
                           "' has the wrong type");
  }
}

template<class T>
void read_field(const Json& obj, const std::string& key,
                const std::string& where, T& out)
{
  if (obj.contains(key))
    out = get_field<T>(obj, key, where);
}

inline std::vector<double> tau_grid_from_json(const Json& j)
{
  if (j.is_string())
    return parse_tau_grid(j.get<std::string>());
  if (j.is_array()) {
    std::vector<double> grid;
    for (const auto& v : j) {
      if (!v.is_number())
        throw InvalidSpecError("config field 'tau_grid' must hold numbers");
      grid.push_back(v.get<double>());
    }
    validate_tau_grid(grid);
    return grid;
  }
  throw InvalidSpecError(
    "config field 'tau_grid' must be \"a:b:step\" or an array");
}

//! 1-based line of the last non-blank character before `offset`
inline long line_of(const std::string& text, std::size_t offset)
{
  offset = std::min(offset, text.size());
  while (offset > 0 && std::isspace(static_cast<unsigned char>(text[offset - 1])))
    --offset;
  long line = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i)
    if (text[i] == '\n')
      ++line;
  return line;
}

} // namespace detail

//! Apply a parsed JSON config on top of `cfg`. Relative input paths are
//! resolved against `base_dir`.
inline void apply_config(RunConfig& cfg, const Json& j,
                         const fs::path& base_dir = {})
{
  using detail::read_field;
  detail::check_keys(j, "",
                     { "command", "input_csv", "outcome_column",
                       "regressor_columns", "instrument_columns", "center",
                       "solver", "basis", "iv", "tau_grid", "rearrangement",
                       "x_grid_points", "seed", "output_dir", "threads",
                       "simulate" });
  read_field(j, "command", "", cfg.command);
  if (j.contains("input_csv")) {
    fs::path p = detail::get_field<std::string>(j, "input_csv", "");
    if (p.is_relative() && !base_dir.empty())
      p = base_dir / p;
    cfg.input_csv = p.string();
  }
  read_field(j, "outcome_column", "", cfg.outcome_column);
  read_field(j, "regressor_columns", "", cfg.regressor_columns);
  read_field(j, "instrument_columns", "", cfg.instrument_columns);
  read_field(j, "center", "", cfg.center);
  if (j.contains("solver")) {
    const auto& s = j["solver"];
    detail::check_keys(s, "solver",
                       { "tol_grad", "tol_constraint", "max_iter",
                         "boundary_fraction", "barrier_start" });
    read_field(s, "tol_grad", "solver", cfg.solver.tol_grad);
    read_field(s, "tol_constraint", "solver", cfg.solver.tol_constraint);
    read_field(s, "max_iter", "solver", cfg.solver.max_iter);
    read_field(s, "boundary_fraction", "solver", cfg.solver.boundary_fraction);
    read_field(s, "barrier_start", "solver", cfg.solver.barrier_start);
  }
  read_field(j, "basis", "", cfg.basis);
  if (j.contains("iv")) {
    const auto& s = j["iv"];
    detail::check_keys(s, "iv", { "method", "pin_higher_slopes" });
    if (s.contains("method")) {
      const auto m = detail::get_field<std::string>(s, "method", "iv");
      if (m == "direct")
        cfg.iv_method = IvMethod::direct;
      else if (m == "indirect")
        cfg.iv_method = IvMethod::indirect;
      else
        throw InvalidSpecError("config field 'iv.method' must be 'direct' or "
                               "'indirect', got '" + m + "'");
    }
    read_field(s, "pin_higher_slopes", "iv", cfg.pin_higher_slopes);
  }
  if (j.contains("tau_grid"))
    cfg.tau_grid = detail::tau_grid_from_json(j["tau_grid"]);
  if (j.contains("rearrangement")) {
    const auto& s = j["rearrangement"];
    detail::check_keys(s, "rearrangement",
                       { "epsilon", "u_grid_size", "y_grid_points",
                         "qr_grid_points" });
    read_field(s, "epsilon", "rearrangement", cfg.epsilon);
    read_field(s, "u_grid_size", "rearrangement", cfg.u_grid_size);
    read_field(s, "y_grid_points", "rearrangement", cfg.y_grid_points);
    read_field(s, "qr_grid_points", "rearrangement", cfg.study.qr_grid_points);
    cfg.study.epsilon = cfg.epsilon;
    cfg.study.u_grid_size = cfg.u_grid_size;
  }
  read_field(j, "x_grid_points", "", cfg.x_grid_points);
  read_field(j, "seed", "", cfg.study.seed);
  read_field(j, "output_dir", "", cfg.output_dir);
  read_field(j, "threads", "", cfg.study.threads);
  if (j.contains("simulate")) {
    const auto& s = j["simulate"];
    detail::check_keys(s, "simulate",
                       { "sample_sizes", "replications", "methods",
                         "coefficient_taus", "rmae_taus", "max_failure_rate",
                         "dgp" });
    if (s.contains("sample_sizes")) {
      const auto sizes =
        detail::get_field<std::vector<long>>(s, "sample_sizes", "simulate");
      cfg.study.sample_sizes.assign(sizes.begin(), sizes.end());
    }
    read_field(s, "replications", "simulate", cfg.study.replications);
    if (s.contains("methods")) {
      cfg.study.methods.clear();
      for (const auto& m :
           detail::get_field<std::vector<std::string>>(s, "methods", "simulate"))
        cfg.study.methods.push_back(sim::method_from_string(m));
    }
    read_field(s, "coefficient_taus", "simulate", cfg.study.coefficient_taus);
    read_field(s, "rmae_taus", "simulate", cfg.study.rmae_taus);
    read_field(s, "max_failure_rate", "simulate", cfg.study.max_failure_rate);
    if (s.contains("dgp")) {
      const auto& d = s["dgp"];
      detail::check_keys(d, "simulate.dgp",
                         { "location", "scale", "x_mean", "x_sd",
                           "truncation_point" });
      auto pair = [&](const char* key, Eigen::Vector2d& out) {
        if (!d.contains(key))
          return;
        const auto v =
          detail::get_field<std::vector<double>>(d, key, "simulate.dgp");
        if (v.size() != 2)
          throw InvalidSpecError(std::string("config field 'simulate.dgp.") +
                                 key + "' must hold two numbers");
        out << v[0], v[1];
      };
      pair("location", cfg.study.dgp.location);
      pair("scale", cfg.study.dgp.scale);
      read_field(d, "x_mean", "simulate.dgp", cfg.study.dgp.x_mean);
      read_field(d, "x_sd", "simulate.dgp", cfg.study.dgp.x_sd);
      read_field(d, "truncation_point", "simulate.dgp",
                 cfg.study.dgp.truncation_point);
    }
  }
}

inline void load_config_file(RunConfig& cfg, const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw InvalidSpecError("cannot open config '" + path + "'");
  const std::string text((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& err) {
    throw InvalidSpecError(path + ":" +
                           std::to_string(detail::line_of(text, err.byte)) +
                           ": " + err.what());
  }
  apply_config(cfg, j, fs::path(path).parent_path());
}

//! 1 configuration, 2 data, 3 numerical.
inline int exit_code_for(const std::exception& err)
{
  if (dynamic_cast<const InvalidSpecError*>(&err) ||
      dynamic_cast<const GridError*>(&err) ||
      dynamic_cast<const DomainError*>(&err) ||
      dynamic_cast<const NotJustIdentifiedError*>(&err))
    return 1;
  if (dynamic_cast<const DataError*>(&err) ||
      dynamic_cast<const DesignRankError*>(&err))
    return 2;
  return 3;
}

inline std::string error_kind(const std::exception& err)
{
  switch (exit_code_for(err)) {
    case 1:
      return "config";
    case 2:
      return "data";
    default:
      return "numerical";
  }
}

inline Json error_json(const std::exception& err)
{
  Json j;
  j["error"] = { { "kind", error_kind(err) },
                 { "message", err.what() },
                 { "exit_code", exit_code_for(err) } };
  if (const auto* s = dynamic_cast<const ScaleNotPositiveError*>(&err))
    j["error"]["observation"] = s->index();
  return j;
}

namespace detail {

inline std::vector<std::string> coefficient_header(Eigen::Index k)
{
  std::vector<std::string> h{ "tau" };
  for (Eigen::Index c = 0; c < k; ++c)
    h.push_back("coef_" + std::to_string(c));
  h.push_back("method");
  return h;
}

inline void append_process(CsvTable& t, std::span<const double> taus,
                           const Matrix& coef, const std::string& method)
{
  for (std::size_t r = 0; r < taus.size(); ++r) {
    std::vector<std::string> row{ format_number(taus[r]) };
    for (Eigen::Index c = 0; c < coef.cols(); ++c)
      row.push_back(format_number(coef(static_cast<Eigen::Index>(r), c)));
    row.push_back(method);
    t.rows.push_back(std::move(row));
  }
}

//! Raw regressor points: the first regressor on an equispaced grid over
//! its observed range, the others at their sample means.
inline Matrix x_grid(const Matrix& raw, int points)
{
  Matrix g(points, raw.cols());
  if (raw.cols() == 0)
    return Matrix(1, 0);
  const double lo = raw.col(0).minCoeff(), hi = raw.col(0).maxCoeff();
  for (int p = 0; p < points; ++p) {
    g(p, 0) = points == 1 ? lo : lo + (hi - lo) * p / (points - 1.0);
    for (Eigen::Index c = 1; c < raw.cols(); ++c)
      g(p, c) = raw.col(c).mean();
  }
  return g;
}

inline std::vector<std::string> line_header(const Dataset& data,
                                            bool with_method)
{
  std::vector<std::string> h;
  if (with_method)
    h.push_back("method");
  h.push_back("u");
  for (const auto& name : data.regressor_names)
    h.push_back(name);
  h.push_back(data.outcome_name);
  return h;
}

inline std::vector<std::string> line_row(const std::string* method, double u,
                                         const Vector& x, double y)
{
  std::vector<std::string> row;
  if (method)
    row.push_back(*method);
  row.push_back(format_number(u));
  for (Eigen::Index c = 0; c < x.size(); ++c)
    row.push_back(format_number(x(c)));
  row.push_back(format_number(y));
  return row;
}

inline Vector raw_row(const Vector& x)
{
  Vector r(x.size() + 1);
  r << 1.0, x;
  return r;
}

//! Quantile regression and rearranged lines at the deciles over the x grid.
inline void append_qr_lines(CsvTable& lines, const RunConfig& cfg,
                            const Dataset& data, const Matrix& grid)
{
  const DesignMatrix design = make_design(data.x, false);
  const auto deciles = decile_grid();
  const QrFit at_deciles = qr_coefficient_process(data.y, design, deciles);
  const std::string qr = "qr", rq = "rearranged_qr";
  for (std::size_t l = 0; l < deciles.size(); ++l)
    for (Eigen::Index p = 0; p < grid.rows(); ++p) {
      const Vector x = grid.row(p).transpose();
      lines.rows.push_back(line_row(
        &qr, deciles[l], x,
        at_deciles.coefficients.row(static_cast<Eigen::Index>(l)).dot(raw_row(x))));
    }

  const bool covers = cfg.tau_grid.front() <= cfg.epsilon + 1e-12 &&
                      cfg.tau_grid.back() >= 1.0 - cfg.epsilon - 1e-12;
  QrFit process = qr_coefficient_process(
    data.y, design,
    covers ? cfg.tau_grid : rearrangement_tau_grid(99, cfg.epsilon));
  process.epsilon = cfg.epsilon;
  process.u_grid_size = cfg.u_grid_size;
  const RearrangedCdf cdf(process);
  const double lo = data.y.minCoeff(), hi = data.y.maxCoeff();
  const double pad = 0.1 * (hi - lo);
  for (Eigen::Index p = 0; p < grid.rows(); ++p) {
    const Vector x = grid.row(p).transpose();
    const Vector q = rearranged_quantiles(cdf, raw_row(x), deciles, lo - pad,
                                          hi + pad, cfg.y_grid_points);
    for (std::size_t l = 0; l < deciles.size(); ++l)
      lines.rows.push_back(
        line_row(&rq, deciles[l], x, q(static_cast<Eigen::Index>(l))));
  }
}

inline std::string out_path(const RunConfig& cfg, const std::string& name)
{
  return (fs::path(cfg.output_dir) / name).string();
}

inline Dataset load_input(const RunConfig& cfg)
{
  Dataset d = load_dataset(cfg.input_csv, cfg.outcome_column,
                           cfg.regressor_columns, cfg.instrument_columns);
  validate(d);
  return d;
}

//! Checks that the decile lines do not cross at any grid point.
inline bool lines_ordered(const Matrix& coef, const Matrix& grid)
{
  for (Eigen::Index p = 0; p < grid.rows(); ++p) {
    const Vector x = raw_row(grid.row(p).transpose());
    for (Eigen::Index l = 1; l < coef.rows(); ++l)
      if (coef.row(l).dot(x) < coef.row(l - 1).dot(x))
        return false;
  }
  return true;
}

inline Json run_fit(const RunConfig& cfg)
{
  const Dataset data = load_input(cfg);
  const DesignMatrix design = build_design(data, cfg.center);
  const DualFit fit = fit_dual(data.y, design, cfg.solver);

  DualFitDocument doc;
  doc.fit = fit;
  doc.center = cfg.center;
  doc.column_means = design.column_means;
  doc.outcome = data.outcome_name;
  doc.regressors = data.regressor_names;
  try {
    doc.cov = covariance(fit, data.y, design);
  } catch (const SingularJacobianError&) {
  }
  Json out = to_json(doc);

  // raw-parameterization process for the plot files
  DualFit raw = fit;
  raw.lambda1 = uncenter_coefficients(fit.lambda1, design);
  raw.lambda2 = uncenter_coefficients(fit.lambda2, design);
  const Matrix grid = x_grid(data.x, cfg.x_grid_points);
  const auto deciles = decile_grid();
  const Matrix at_deciles = quantile_coefficients(raw, deciles);
  const Vector s = make_design(data.x, false).values * raw.lambda2;
  out["min_scale_index"] = s.minCoeff();
  out["deciles_ordered_on_grid"] = lines_ordered(at_deciles, grid);
  write_json_file(out_path(cfg, "fit.json"), out);

  CsvTable coef{ coefficient_header(design.cols()), {} };
  append_process(coef, cfg.tau_grid, quantile_coefficients(raw, cfg.tau_grid),
                 "dual");
  const QrFit qr =
    qr_coefficient_process(data.y, make_design(data.x, false), cfg.tau_grid);
  append_process(coef, cfg.tau_grid, qr.coefficients, "qr");
  write_csv_file(out_path(cfg, "coefficients.csv"), coef);

  CsvTable levels{ line_header(data, false), {} };
  CsvTable lines{ line_header(data, true), {} };
  const std::string dual = "dual";
  for (std::size_t l = 0; l < deciles.size(); ++l)
    for (Eigen::Index p = 0; p < grid.rows(); ++p) {
      const Vector x = grid.row(p).transpose();
      const double y =
        at_deciles.row(static_cast<Eigen::Index>(l)).dot(raw_row(x));
      levels.rows.push_back(line_row(nullptr, deciles[l], x, y));
      lines.rows.push_back(line_row(&dual, deciles[l], x, y));
    }
  append_qr_lines(lines, cfg, data, grid);
  write_csv_file(out_path(cfg, "level_sets.csv"), levels);
  write_csv_file(out_path(cfg, "quantile_lines.csv"), lines);
  return { { "fit", out_path(cfg, "fit.json") },
           { "coefficients", out_path(cfg, "coefficients.csv") },
           { "level_sets", out_path(cfg, "level_sets.csv") },
           { "quantile_lines", out_path(cfg, "quantile_lines.csv") },
           { "converged", fit.converged } };
}

inline Json run_gdr(const RunConfig& cfg)
{
  const Dataset data = load_input(cfg);
  const BasisSpec basis = basis_by_name(cfg.basis);
  GdrOptions opt;
  opt.tol_grad = cfg.solver.tol_grad;
  opt.tol_constraint = cfg.solver.tol_constraint;
  opt.max_iter = cfg.solver.max_iter;
  const GdrFit fit = fit_gdr(data, basis, opt);
  write_json_file(out_path(cfg, "gdr.json"), to_json(fit, basis));

  const auto ecdf = ecdf_transform(fit.e).first;
  const Matrix grid = x_grid(data.x, cfg.x_grid_points);
  CsvTable levels{ line_header(data, false), {} };
  for (double u : decile_grid()) {
    const double e = ecdf.quantile(u);
    for (Eigen::Index p = 0; p < grid.rows(); ++p) {
      const Vector x = grid.row(p).transpose();
      levels.rows.push_back(
        line_row(nullptr, u, x, gdr_reconstruct(fit, basis, x, e)));
    }
  }
  write_csv_file(out_path(cfg, "level_sets.csv"), levels);
  return { { "fit", out_path(cfg, "gdr.json") },
           { "level_sets", out_path(cfg, "level_sets.csv") },
           { "converged", fit.converged } };
}

inline Json run_iv(const RunConfig& cfg)
{
  const Dataset data = load_input(cfg);
  IvOptions opt;
  opt.tol_grad = cfg.solver.tol_grad;
  opt.tol_constraint = cfg.solver.tol_constraint;
  opt.max_iter = cfg.solver.max_iter;
  opt.boundary_fraction = cfg.solver.boundary_fraction;
  opt.pin_higher_slopes = cfg.pin_higher_slopes;
  const IvFit fit = cfg.iv_method == IvMethod::direct
                      ? fit_iv_direct(data, opt)
                      : fit_iv_indirect(data, basis_by_name(cfg.basis), opt);
  Json out = to_json(fit);
  out["tsls"] = to_json(two_stage_least_squares(data.y, data));
  out["tsls_se"] = to_json(two_stage_least_squares_se(data.y, data));
  write_json_file(out_path(cfg, "iv.json"), out);
  return { { "fit", out_path(cfg, "iv.json") }, { "converged", fit.converged } };
}

inline Json run_qr(const RunConfig& cfg)
{
  const Dataset data = load_input(cfg);
  const DesignMatrix design = build_design(data, false);
  const QrFit qr = qr_coefficient_process(data.y, design, cfg.tau_grid);
  CsvTable coef{ coefficient_header(design.cols()), {} };
  append_process(coef, cfg.tau_grid, qr.coefficients, "qr");
  write_csv_file(out_path(cfg, "qr_coefficients.csv"), coef);
  CsvTable lines{ line_header(data, true), {} };
  append_qr_lines(lines, cfg, data, x_grid(data.x, cfg.x_grid_points));
  write_csv_file(out_path(cfg, "quantile_lines.csv"), lines);
  return { { "coefficients", out_path(cfg, "qr_coefficients.csv") },
           { "quantile_lines", out_path(cfg, "quantile_lines.csv") } };
}

inline std::string tau_label(double tau)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", tau);
  return buf;
}

inline Json run_simulate(const RunConfig& cfg)
{
  const sim::SimReport report = sim::run_study(cfg.study);
  const auto& sc = report.config;

  CsvTable t1{ { "n", "used", "failed", "L1_dr_x100", "L1_qr_x100",
                 "L1_ratio", "L2_dr_x100", "L2_qr_x100", "L2_ratio",
                 "Linf_dr_x100", "Linf_qr_x100", "Linf_ratio" },
               {} };
  for (const auto& lp : report.lp)
    t1.rows.push_back({ std::to_string(lp.n), std::to_string(lp.used),
                        std::to_string(lp.failed), format_number(100 * lp.l1_dr),
                        format_number(100 * lp.l1_qr),
                        format_number(lp.l1_ratio()),
                        format_number(100 * lp.l2_dr),
                        format_number(100 * lp.l2_qr),
                        format_number(lp.l2_ratio()),
                        format_number(100 * lp.linf_dr),
                        format_number(100 * lp.linf_qr),
                        format_number(lp.linf_ratio()) });
  write_csv_file(out_path(cfg, "table1.csv"), t1);

  for (int c = 0; c < 2; ++c) {
    CsvTable t{ { "n", "method" }, {} };
    for (double tau : sc.rmae_taus)
      t.header.push_back("tau_" + tau_label(tau));
    for (const auto& row : report.rmae_rows) {
      if (row.coefficient != c)
        continue;
      std::vector<std::string> r{ std::to_string(row.n), row.method };
      for (double v : row.values)
        r.push_back(format_number(v));
      t.rows.push_back(std::move(r));
    }
    write_csv_file(out_path(cfg, c == 0 ? "table2.csv" : "table3.csv"), t);
  }

  CsvTable per{ { "n", "rep", "seed", "status", "failure", "L1_dr", "L1_qr",
                  "L2_dr", "L2_qr", "Linf_dr", "Linf_qr" },
                {} };
  for (const char* m : { "dr", "qr" })
    for (int c = 0; c < 2; ++c)
      for (double tau : sc.coefficient_taus)
        per.header.push_back(std::string("err_") + m + "_b" +
                             std::to_string(c) + "_tau_" + tau_label(tau));
  for (const auto& r : report.per_rep) {
    std::vector<std::string> row{
      std::to_string(r.n),        std::to_string(r.rep),
      std::to_string(r.seed),     r.ok ? "ok" : "failed",
      r.failure,                  format_number(r.l1_dr),
      format_number(r.l1_qr),     format_number(r.l2_dr),
      format_number(r.l2_qr),     format_number(r.linf_dr),
      format_number(r.linf_qr)
    };
    for (const Matrix* m : { &r.coef_err_dr, &r.coef_err_qr })
      for (Eigen::Index c = 0; c < 2; ++c)
        for (Eigen::Index t = 0; t < m->rows(); ++t)
          row.push_back(format_number((*m)(t, c)));
    per.rows.push_back(std::move(row));
  }
  write_csv_file(out_path(cfg, "per_rep.csv"), per);

  CsvTable bands{ { "n", "method", "coefficient", "tau", "truth", "median",
                    "q05", "q95" },
                  {} };
  for (const auto& b : report.bands)
    bands.rows.push_back({ std::to_string(b.n), b.method,
                           b.coefficient == 0 ? "intercept" : "slope",
                           format_number(b.tau), format_number(b.truth),
                           format_number(b.median), format_number(b.q05),
                           format_number(b.q95) });
  write_csv_file(out_path(cfg, "bands.csv"), bands);

  Json echo;
  echo["seed"] = sc.seed;
  echo["replications"] = sc.replications;
  echo["sample_sizes"] = sc.sample_sizes;
  std::vector<std::string> methods;
  for (auto m : sc.methods)
    methods.push_back(sim::to_string(m));
  echo["methods"] = methods;
  echo["threads"] = sc.threads;
  echo["coefficient_taus"] = sc.coefficient_taus;
  echo["rmae_taus"] = sc.rmae_taus;
  echo["qr_grid_points"] = sc.qr_grid_points;
  echo["epsilon"] = sc.epsilon;
  echo["u_grid_size"] = sc.u_grid_size;
  echo["max_failure_rate"] = sc.max_failure_rate;
  echo["dgp"] = { { "location", { sc.dgp.location(0), sc.dgp.location(1) } },
                  { "scale", { sc.dgp.scale(0), sc.dgp.scale(1) } },
                  { "x_mean", sc.dgp.x_mean },
                  { "x_sd", sc.dgp.x_sd },
                  { "truncation_point", sc.dgp.truncation_point } };
  Json rep;
  rep["config"] = echo;
  rep["files"] = { out_path(cfg, "table1.csv"), out_path(cfg, "table2.csv"),
                   out_path(cfg, "table3.csv"), out_path(cfg, "per_rep.csv"),
                   out_path(cfg, "bands.csv") };
  write_json_file(out_path(cfg, "report.json"), rep);
  return rep["files"];
}

} // namespace detail

//! Runs the configured command and writes its artifacts into output_dir.
//! Returns a JSON summary of what was written.
inline Json run(const RunConfig& cfg)
{
  cfg.validate();
  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec || !fs::is_directory(cfg.output_dir))
    throw InvalidSpecError("output directory '" + cfg.output_dir +
                           "' cannot be created");
  if (cfg.command == "fit")
    return detail::run_fit(cfg);
  if (cfg.command == "gdr")
    return detail::run_gdr(cfg);
  if (cfg.command == "iv")
    return detail::run_iv(cfg);
  if (cfg.command == "qr")
    return detail::run_qr(cfg);
  return detail::run_simulate(cfg);
}

} // namespace dualreg::io
