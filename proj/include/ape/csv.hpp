#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "ape/types.hpp"

namespace ape {

// Shortest decimal string that parses back to the identical double.
inline std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const std::string& where) {
  double value = 0.0;
  const char* begin = s.data();
  const char* end = begin + s.size();
  const auto res = std::from_chars(begin, end, value);
  if (res.ec != std::errc() || res.ptr != end)
    throw std::invalid_argument(where + ": '" + std::string(s) + "' is not a number");
  return value;
}

struct StringTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

namespace detail {

// Splits one CSV line, honoring double-quoted fields with doubled quotes.
inline std::vector<std::string> split_csv_line(const std::string& line,
                                               const std::string& where) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"' && cur.empty()) {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (quoted) throw std::invalid_argument(where + ": unterminated quoted field");
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out += "\"\"";
    else out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

}  // namespace detail

// Reads a header + rows table; every row must match the header width.
inline StringTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("csv: cannot open '" + path + "'");
  StringTable table;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() && table.header.empty()) continue;  // leading blank lines
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    auto fields = detail::split_csv_line(line, where);
    if (table.header.empty()) {
      table.header = std::move(fields);
    } else {
      if (fields.size() != table.header.size())
        throw std::invalid_argument(where + ": expected " +
                                    std::to_string(table.header.size()) +
                                    " fields, found " + std::to_string(fields.size()));
      table.rows.push_back(std::move(fields));
    }
  }
  if (table.header.empty()) throw std::invalid_argument("csv: '" + path + "' is empty");
  return table;
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("csv: cannot write '" + path + "'");
  for (size_t j = 0; j < header.size(); ++j) {
    if (j) out << ',';
    out << detail::csv_escape(header[j]);
  }
  out << '\n';
  for (const auto& row : rows) {
    if (row.size() != header.size())
      throw std::invalid_argument("csv: row width does not match header");
    for (size_t j = 0; j < row.size(); ++j) {
      if (j) out << ',';
      out << detail::csv_escape(row[j]);
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("csv: write to '" + path + "' failed");
}

// Loads a design matrix and response from a header CSV.  Every column other
// than the response becomes a feature, in file order.
inline Dataset load_dataset(const std::string& path, const std::string& response) {
  const StringTable table = read_csv(path);
  Index response_col = -1;
  for (size_t j = 0; j < table.header.size(); ++j)
    if (table.header[j] == response) response_col = static_cast<Index>(j);
  if (response_col < 0)
    throw std::invalid_argument("csv: '" + path + "' has no column named '" + response +
                                "'");
  if (table.header.size() < 2)
    throw std::invalid_argument("csv: '" + path + "' has no feature columns");
  if (table.rows.empty())
    throw std::invalid_argument("csv: '" + path + "' has no data rows");

  Dataset d;
  const Index n = static_cast<Index>(table.rows.size());
  const Index p = static_cast<Index>(table.header.size()) - 1;
  d.X.resize(n, p);
  d.Y.resize(n);
  for (size_t j = 0; j < table.header.size(); ++j)
    if (static_cast<Index>(j) != response_col)
      d.feature_names.push_back(table.header[j]);
  for (Index i = 0; i < n; ++i) {
    const auto& row = table.rows[static_cast<size_t>(i)];
    const std::string where = path + ", data row " + std::to_string(i + 1);
    Index col = 0;
    for (size_t j = 0; j < row.size(); ++j) {
      const double v = parse_double(row[j], where + ", column '" + table.header[j] + "'");
      if (static_cast<Index>(j) == response_col)
        d.Y[i] = v;
      else
        d.X(i, col++) = v;
    }
  }
  d.validate();
  return d;
}

}  // namespace ape
