#pragma once

#include "../data.hpp"
#include "../errors.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace dualreg::io {

struct CsvTable
{
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  //! position of `name` in the header, or -1
  long column(const std::string& name) const
  {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name)
        return static_cast<long>(j);
    return -1;
  }
};

//! RFC 4180 reader: comma separated, fields optionally double-quoted with
//! "" as an escaped quote, quoted fields may span lines. The first record
//! is the header. CRLF and LF line ends are accepted.
inline CsvTable read_csv(std::istream& in, const std::string& source = "input")
{
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false, field_started = false, any = false;
  long line = 1;
  char ch;
  auto end_field = [&] {
    record.push_back(field);
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    records.push_back(std::move(record));
    record.clear();
    any = false;
  };
  while (in.get(ch)) {
    if (quoted) {
      if (ch == '"') {
        if (in.peek() == '"') {
          in.get(ch);
          field += '"';
        } else {
          quoted = false;
        }
      } else {
        if (ch == '\n')
          ++line;
        field += ch;
      }
      continue;
    }
    switch (ch) {
      case '"':
        if (field_started)
          throw DataError(source + ":" + std::to_string(line) +
                          ": quote inside an unquoted field");
        quoted = true;
        field_started = true;
        any = true;
        break;
      case ',':
        end_field();
        any = true;
        break;
      case '\r':
        break;
      case '\n':
        if (any || !field.empty())
          end_record();
        ++line;
        break;
      default:
        field += ch;
        field_started = true;
        any = true;
    }
  }
  if (quoted)
    throw DataError(source + ": unterminated quoted field");
  if (any || !field.empty())
    end_record();
  if (records.empty())
    throw DataError(source + ": empty file, a header row is required");

  CsvTable t;
  t.header = std::move(records.front());
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != t.header.size())
      throw DataError(source + ": record " + std::to_string(r + 1) + " has " +
                      std::to_string(records[r].size()) + " fields, header has " +
                      std::to_string(t.header.size()));
    t.rows.push_back(std::move(records[r]));
  }
  return t;
}

inline CsvTable read_csv_file(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw DataError("cannot open '" + path + "'");
  return read_csv(in, path);
}

inline std::string quote_field(const std::string& s)
{
  if (s.find_first_of(",\"\r\n") == std::string::npos)
    return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"')
      out += '"';
    out += c;
  }
  return out + "\"";
}

//! 17 significant digits; NaN and Inf spelled out.
inline std::string format_number(double v)
{
  if (std::isnan(v))
    return "NaN";
  if (std::isinf(v))
    return v > 0 ? "Inf" : "-Inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_number(const std::string& s, const std::string& where)
{
  std::size_t b = s.find_first_not_of(" \t");
  std::size_t e = s.find_last_not_of(" \t");
  if (b == std::string::npos)
    throw DataError(where + ": empty numeric field");
  const std::string t = s.substr(b, e - b + 1);
  if (t == "NaN" || t == "nan")
    return std::numeric_limits<double>::quiet_NaN();
  if (t == "Inf" || t == "inf")
    return std::numeric_limits<double>::infinity();
  if (t == "-Inf" || t == "-inf")
    return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size())
    throw DataError(where + ": '" + t + "' is not a number");
  return v;
}

inline void write_csv(std::ostream& out, const CsvTable& t)
{
  auto write_row = [&](const std::vector<std::string>& row) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j)
        out << ',';
      out << quote_field(row[j]);
    }
    out << '\n';
  };
  write_row(t.header);
  for (const auto& r : t.rows)
    write_row(r);
}

inline void write_csv_file(const std::string& path, const CsvTable& t)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw DataError("cannot write '" + path + "'");
  write_csv(out, t);
  if (!out)
    throw DataError("write to '" + path + "' failed");
}

//! Numeric matrix of the named columns.
inline Matrix numeric_columns(const CsvTable& t,
                              const std::vector<std::string>& names,
                              const std::string& source)
{
  Matrix m(static_cast<Eigen::Index>(t.rows.size()),
           static_cast<Eigen::Index>(names.size()));
  for (std::size_t j = 0; j < names.size(); ++j) {
    const long c = t.column(names[j]);
    if (c < 0)
      throw InvalidSpecError("column '" + names[j] + "' not found in " +
                             source);
    for (std::size_t r = 0; r < t.rows.size(); ++r)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) =
        parse_number(t.rows[r][static_cast<std::size_t>(c)],
                     source + " row " + std::to_string(r + 2) + " column '" +
                       names[j] + "'");
  }
  return m;
}

//! Dataset from a CSV file; missing columns raise InvalidSpecError naming
//! the column, malformed values raise DataError.
inline Dataset load_dataset(const std::string& path, const std::string& outcome,
                            const std::vector<std::string>& regressors,
                            const std::vector<std::string>& instruments = {})
{
  const CsvTable t = read_csv_file(path);
  Dataset d;
  d.outcome_name = outcome;
  d.regressor_names = regressors;
  d.instrument_names = instruments;
  d.y = numeric_columns(t, { outcome }, path).col(0);
  d.x = numeric_columns(t, regressors, path);
  if (!instruments.empty())
    d.z = numeric_columns(t, instruments, path);
  return d;
}

} // namespace dualreg::io
