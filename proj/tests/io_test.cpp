#include "test_support.hpp"

#include <dualreg/io/csv.hpp>
#include <dualreg/io/json.hpp>
#include <dualreg/io/run.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

using namespace dualreg;
using namespace dualreg::io;

namespace {

std::filesystem::path scratch(const std::string& name)
{
  auto p = std::filesystem::temp_directory_path() / ("dualreg_io_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

void save(const Dataset& d, const std::string& path)
{
  CsvTable t;
  t.header.push_back(d.outcome_name);
  for (const auto& r : d.regressor_names)
    t.header.push_back(r);
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    std::vector<std::string> row{ format_number(d.y(i)) };
    for (Eigen::Index c = 0; c < d.x.cols(); ++c)
      row.push_back(format_number(d.x(i, c)));
    t.rows.push_back(row);
  }
  write_csv_file(path, t);
}

} // namespace

TEST(Csv, QuotingRoundTrip)
{
  CsvTable t{ { "a", "b,c", "q\"uote" },
              { { "1", "x,y", "line\nbreak" }, { "2", "", "\"\"" } } };
  std::stringstream s;
  write_csv(s, t);
  const CsvTable back = read_csv(s);
  EXPECT_EQ(back.header, t.header);
  EXPECT_EQ(back.rows, t.rows);
}

TEST(Csv, CrlfAndTrailingNewline)
{
  std::stringstream s("y,x\r\n1,2\r\n3,4\r\n");
  const CsvTable t = read_csv(s);
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[1][1], "4");
}

TEST(Csv, Malformed)
{
  std::stringstream ragged("y,x\n1,2,3\n");
  EXPECT_THROW(read_csv(ragged), DataError);
  std::stringstream open("y,x\n\"1,2\n");
  EXPECT_THROW(read_csv(open), DataError);
  std::stringstream empty("");
  EXPECT_THROW(read_csv(empty), DataError);
  EXPECT_THROW(parse_number("1.5x", "here"), DataError);
}

TEST(Csv, NumbersRoundTripExactly)
{
  std::mt19937_64 rng(4);
  const Vector v = dualreg::testing::normal_vector(rng, 200, 0.0, 1e3);
  for (double x : v)
    EXPECT_EQ(parse_number(format_number(x), "t"), x);
  EXPECT_TRUE(std::isnan(parse_number(format_number(std::nan("")), "t")));
}

TEST(Csv, MissingColumnNamed)
{
  const auto dir = scratch("missing");
  std::mt19937_64 rng(1);
  auto s = dualreg::testing::random_instance(rng, 30, 2);
  s.data.regressor_names = { "income" };
  save(s.data, (dir / "d.csv").string());
  try {
    load_dataset((dir / "d.csv").string(), "y", { "wealth" });
    FAIL() << "expected InvalidSpecError";
  } catch (const InvalidSpecError& e) {
    EXPECT_NE(std::string(e.what()).find("'wealth'"), std::string::npos);
  }
}

TEST(Csv, DatasetRoundTrip)
{
  const auto dir = scratch("dataset");
  std::mt19937_64 rng(2);
  auto s = dualreg::testing::random_instance(rng, 50, 3);
  s.data.regressor_names = { "x1", "x2" };
  save(s.data, (dir / "d.csv").string());
  const Dataset back = load_dataset((dir / "d.csv").string(), "y", { "x1", "x2" });
  EXPECT_EQ(back.y, s.data.y);
  EXPECT_EQ(back.x, s.data.x);
}

TEST(Json, DualFitReloadReproducesObjective)
{
  std::mt19937_64 rng(3);
  for (bool center : { false, true }) {
    auto s = dualreg::testing::random_instance(rng, 300, 3);
    const DesignMatrix design = make_design(s.data.x, center);
    DualFitDocument doc;
    doc.fit = fit_dual(s.data.y, design);
    doc.cov = covariance(doc.fit, s.data.y, design);
    doc.center = center;
    doc.column_means = design.column_means;
    const auto dir = scratch("json");
    write_json_file((dir / "fit.json").string(), to_json(doc));
    const DualFitDocument back =
      dual_fit_from_json(read_json_file((dir / "fit.json").string()));
    EXPECT_EQ(back.fit.lambda1, doc.fit.lambda1);
    EXPECT_EQ(back.fit.lambda2, doc.fit.lambda2);
    EXPECT_NEAR(reevaluate_objective(back, s.data), back.fit.objective_dual,
                1e-12 * std::max(1.0, std::abs(back.fit.objective_dual)));
    ASSERT_TRUE(back.cov.has_value());
    EXPECT_NEAR((back.cov->se - doc.cov->se).norm(), 0.0, 1e-14);
  }
}

TEST(Json, RejectsForeignDocument)
{
  EXPECT_THROW(dual_fit_from_json(Json{ { "method", "gdr" } }), DataError);
  EXPECT_THROW(dual_fit_from_json(Json{ { "method", "dual" } }), DataError);
}

TEST(Config, FieldsAndErrors)
{
  RunConfig cfg;
  apply_config(cfg, Json::parse(R"({"command":"simulate","seed":7,
    "simulate":{"sample_sizes":[50],"replications":3,
    "dgp":{"location":[1,2],"scale":[1,0.5]}},"tau_grid":"0.1:0.9:0.1"})"));
  EXPECT_EQ(cfg.study.seed, 7u);
  EXPECT_EQ(cfg.study.sample_sizes.size(), 1u);
  EXPECT_EQ(cfg.tau_grid.size(), 9u);
  EXPECT_DOUBLE_EQ(cfg.study.dgp.location(1), 2.0);

  auto message = [](const std::string& text) {
    RunConfig c;
    try {
      apply_config(c, Json::parse(text));
    } catch (const InvalidSpecError& e) {
      return std::string(e.what());
    } catch (const GridError& e) {
      return std::string("grid: ") + e.what();
    }
    return std::string();
  };
  EXPECT_NE(message(R"({"solver":{"tolerance":1}})").find("solver.tolerance"),
            std::string::npos);
  EXPECT_NE(message(R"({"simulate":{"replications":"many"}})")
              .find("simulate.replications"),
            std::string::npos);
  EXPECT_NE(message(R"({"simulate":{"dgp":{"scale":[1]}}})")
              .find("simulate.dgp.scale"),
            std::string::npos);
  EXPECT_EQ(message(R"({"tau_grid":[0.5,0.2]})").rfind("grid: ", 0), 0u);
}

TEST(Config, ParseErrorReportsLine)
{
  const auto dir = scratch("config");
  const auto path = (dir / "bad.json").string();
  std::ofstream(path) << "{\n  \"seed\": 1,\n  \"center\": tru\n}\n";
  RunConfig cfg;
  try {
    load_config_file(cfg, path);
    FAIL() << "expected InvalidSpecError";
  } catch (const InvalidSpecError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.json:3:"), std::string::npos)
      << e.what();
  }
}

TEST(Config, ExitCodes)
{
  EXPECT_EQ(exit_code_for(InvalidSpecError("x")), 1);
  EXPECT_EQ(exit_code_for(GridError("x")), 1);
  EXPECT_EQ(exit_code_for(NotJustIdentifiedError("x")), 1);
  EXPECT_EQ(exit_code_for(DataError("x")), 2);
  EXPECT_EQ(exit_code_for(DesignRankError("x")), 2);
  EXPECT_EQ(exit_code_for(SingularJacobianError("x")), 3);
  EXPECT_EQ(exit_code_for(ScaleNotPositiveError(4)), 3);
  EXPECT_EQ(error_json(ScaleNotPositiveError(4))["error"]["observation"], 4);
}
