#pragma once

#include "../data.hpp"
#include "../gdr.hpp"
#include "../iv.hpp"
#include "../location_scale.hpp"
#include "../solver.hpp"

#include <json.hpp>

#include <fstream>
#include <string>
#include <vector>

namespace dualreg::io {

using Json = nlohmann::json;

inline Json to_json(const Vector& v)
{
  return Json(std::vector<double>(v.data(), v.data() + v.size()));
}

//! rows of the matrix as arrays
inline Json to_json(const Matrix& m)
{
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    rows.push_back(to_json(Vector(m.row(i).transpose())));
  return rows;
}

inline Vector vector_from_json(const Json& j, const std::string& field)
{
  if (!j.is_array())
    throw DataError("field '" + field + "' must be an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number())
      throw DataError("field '" + field + "' entry " + std::to_string(i) +
                      " is not a number");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline Matrix matrix_from_json(const Json& j, const std::string& field)
{
  if (!j.is_array())
    throw DataError("field '" + field + "' must be an array of rows");
  if (j.empty())
    return Matrix(0, 0);
  const Vector first = vector_from_json(j[0], field);
  Matrix m(static_cast<Eigen::Index>(j.size()), first.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    const Vector row = vector_from_json(j[i], field);
    if (row.size() != m.cols())
      throw DataError("field '" + field + "' has ragged rows");
    m.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  return m;
}

inline const Json& require(const Json& doc, const std::string& field)
{
  if (!doc.contains(field))
    throw DataError("fit document lacks field '" + field + "'");
  return doc.at(field);
}

//! Everything needed to re-evaluate a dual regression fit on its data.
struct DualFitDocument
{
  DualFit fit;
  std::optional<CovarianceEstimate> cov;
  bool center = false;
  Vector column_means; //!< length k, zero for the intercept
  std::string outcome;
  std::vector<std::string> regressors;
};

inline Json to_json(const DualFitDocument& d)
{
  Json j;
  j["method"] = "dual";
  j["outcome"] = d.outcome;
  j["regressors"] = d.regressors;
  j["center"] = d.center;
  j["column_means"] = to_json(d.column_means);
  j["n"] = d.fit.e.size();
  j["k"] = d.fit.lambda1.size();
  j["lambda1"] = to_json(d.fit.lambda1);
  j["lambda2"] = to_json(d.fit.lambda2);
  if (d.cov) {
    const auto k = d.fit.lambda1.size();
    j["se"] = { { "lambda1", to_json(Vector(d.cov->se.head(k))) },
                { "lambda2", to_json(Vector(d.cov->se.tail(k))) } };
    j["vcov"] = to_json(d.cov->vcov);
  }
  j["objective_dual"] = d.fit.objective_dual;
  j["objective_primal"] = d.fit.objective_primal;
  j["iterations"] = d.fit.iterations;
  j["converged"] = d.fit.converged;
  j["e"] = to_json(d.fit.e);
  j["u"] = to_json(d.fit.u);
  return j;
}

inline DualFitDocument dual_fit_from_json(const Json& j)
{
  if (!j.is_object() || j.value("method", "") != "dual")
    throw DataError("not a dual regression fit document");
  DualFitDocument d;
  d.outcome = j.value("outcome", "y");
  d.regressors = j.value("regressors", std::vector<std::string>{});
  d.center = j.value("center", false);
  d.column_means = vector_from_json(require(j, "column_means"), "column_means");
  d.fit.lambda1 = vector_from_json(require(j, "lambda1"), "lambda1");
  d.fit.lambda2 = vector_from_json(require(j, "lambda2"), "lambda2");
  if (d.fit.lambda1.size() != d.fit.lambda2.size() ||
      d.column_means.size() != d.fit.lambda1.size())
    throw DataError("fit document has inconsistent dimensions");
  d.fit.e = vector_from_json(require(j, "e"), "e");
  d.fit.u = vector_from_json(require(j, "u"), "u");
  d.fit.objective_dual = require(j, "objective_dual").get<double>();
  d.fit.objective_primal = require(j, "objective_primal").get<double>();
  d.fit.iterations = j.value("iterations", 0);
  d.fit.converged = j.value("converged", false);
  if (j.contains("vcov")) {
    CovarianceEstimate c;
    c.vcov = matrix_from_json(j["vcov"], "vcov");
    c.se = c.vcov.diagonal().cwiseMax(0.0).cwiseSqrt();
    d.cov = c;
  }
  return d;
}

//! Design of `data` in the parameterization stored in the document.
inline DesignMatrix document_design(const DualFitDocument& d,
                                    const Dataset& data)
{
  DesignMatrix design = make_design(data.x, false);
  if (design.cols() != d.fit.lambda1.size())
    throw DataError("dataset has " + std::to_string(design.cols()) +
                    " design columns, fit has " +
                    std::to_string(d.fit.lambda1.size()));
  if (d.center) {
    design.centered = true;
    design.column_means = d.column_means;
    for (Eigen::Index c = 1; c < design.cols(); ++c)
      design.values.col(c).array() -= d.column_means(c);
  }
  return design;
}

//! y'e with e recomputed from the stored multipliers.
inline double reevaluate_objective(const DualFitDocument& d,
                                   const Dataset& data)
{
  const DesignMatrix design = document_design(d, data);
  return data.y.dot(
    residual_from_multipliers(data.y, design, d.fit.lambda1, d.fit.lambda2));
}

inline Json to_json(const GdrFit& f, const BasisSpec& basis)
{
  Json j;
  j["method"] = "gdr";
  j["basis"] = basis.name;
  j["J"] = basis.J();
  j["gamma"] = to_json(f.gamma);
  j["lambda"] = to_json(f.lambda);
  j["column_means"] = to_json(f.column_means);
  j["objective"] = f.objective;
  j["max_moment"] = f.max_moment;
  j["iterations"] = f.iterations;
  j["converged"] = f.converged;
  j["e"] = to_json(f.e);
  j["u"] = to_json(f.u);
  return j;
}

inline GdrFit gdr_fit_from_json(const Json& j)
{
  if (!j.is_object() || j.value("method", "") != "gdr")
    throw DataError("not a generalized dual regression fit document");
  GdrFit f;
  f.gamma = vector_from_json(require(j, "gamma"), "gamma");
  f.lambda = matrix_from_json(require(j, "lambda"), "lambda");
  f.column_means = vector_from_json(require(j, "column_means"), "column_means");
  f.objective = require(j, "objective").get<double>();
  f.max_moment = j.value("max_moment", 0.0);
  f.iterations = j.value("iterations", 0);
  f.converged = j.value("converged", false);
  f.e = vector_from_json(require(j, "e"), "e");
  f.u = vector_from_json(require(j, "u"), "u");
  if (f.lambda.rows() == 0)
    f.lambda = Matrix(require(j, "J").get<long>(), 0);
  return f;
}

inline Json to_json(const IvFit& f)
{
  Json j;
  j["method"] = std::string("iv_") + to_string(f.method);
  j["beta1"] = to_json(f.beta1);
  j["beta2"] = to_json(f.beta2);
  j["higher"] = to_json(f.higher);
  j["column_means"] = to_json(f.column_means);
  if (f.lambda1.size()) {
    j["lambda1"] = to_json(f.lambda1);
    j["lambda2"] = to_json(f.lambda2);
  }
  if (f.first_stage.size())
    j["first_stage"] = to_json(f.first_stage);
  j["max_moment"] = f.max_moment;
  j["iterations"] = f.iterations;
  j["converged"] = f.converged;
  j["e"] = to_json(f.e);
  j["u"] = to_json(f.u);
  return j;
}

inline void write_json_file(const std::string& path, const Json& j)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw DataError("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
  if (!out)
    throw DataError("write to '" + path + "' failed");
}

inline Json read_json_file(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw DataError("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& err) {
    throw DataError(path + ": " + err.what());
  }
}

} // namespace dualreg::io
