#pragma once

// Dated return tables and their CSV form: header `date,<name>...`, ISO-8601
// dates, decimal returns.

#include <charconv>
#include <cmath>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"

namespace ccpde {

struct ReturnTable {
  std::vector<std::string> dates;
  std::vector<std::string> names;
  Eigen::MatrixXd values;  // dates x names
  std::string frequency = "daily";

  Eigen::Index rows() const { return static_cast<Eigen::Index>(dates.size()); }

  Eigen::Index column(const std::string& name) const {
    for (std::size_t k = 0; k < names.size(); ++k)
      if (names[k] == name) return static_cast<Eigen::Index>(k);
    throw DataError("column '" + name + "' not found");
  }
  bool has_column(const std::string& name) const {
    for (const auto& n : names)
      if (n == name) return true;
    return false;
  }

  bool operator==(const ReturnTable& o) const {
    return dates == o.dates && names == o.names && frequency == o.frequency &&
           values.rows() == o.values.rows() && values.cols() == o.values.cols() &&
           values == o.values;
  }
};

inline bool valid_iso_date(std::string_view s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
  int y = 0;
  unsigned mo = 0, d = 0;
  auto num = [&](std::size_t pos, std::size_t len, auto& out) {
    auto r = std::from_chars(s.data() + pos, s.data() + pos + len, out);
    return r.ec == std::errc{} && r.ptr == s.data() + pos + len;
  };
  if (!num(0, 4, y) || !num(5, 2, mo) || !num(8, 2, d)) return false;
  return std::chrono::year_month_day{std::chrono::year{y}, std::chrono::month{mo},
                                     std::chrono::day{d}}
      .ok();
}

/// ISO date `offset` calendar days after `start`.
inline std::string iso_date_plus(const std::string& start, int offset) {
  if (!valid_iso_date(start)) throw ContractError("iso_date_plus: bad date " + start);
  using namespace std::chrono;
  const year_month_day ymd{year{std::stoi(start.substr(0, 4))},
                           month{static_cast<unsigned>(std::stoi(start.substr(5, 2)))},
                           day{static_cast<unsigned>(std::stoi(start.substr(8, 2)))}};
  const year_month_day out{sys_days{ymd} + days{offset}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(out.year()),
                static_cast<unsigned>(out.month()), static_cast<unsigned>(out.day()));
  return buf;
}

/// Shortest-form decimal text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

enum class MissingPolicy { strict, drop_row };

struct LoadOptions {
  MissingPolicy missing = MissingPolicy::strict;
};

struct LoadResult {
  ReturnTable table;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool parse_number(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc{} && r.ptr == s.data() + s.size() && std::isfinite(out);
}

}  // namespace detail

inline LoadResult parse_returns(std::istream& in, const LoadOptions& opt = {}) {
  LoadResult res;
  ReturnTable& t = res.table;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (!have_header && std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split(line);
    if (cells.size() < 2 || cells[0] != "date")
      throw DataError("line " + std::to_string(lineno) + ": header must start with 'date'");
    std::unordered_set<std::string> seen;
    for (std::size_t k = 1; k < cells.size(); ++k) {
      std::string name(cells[k]);
      if (name.empty()) throw DataError("header: empty column name");
      if (!seen.insert(name).second) throw DataError("header: duplicate column '" + name + "'");
      t.names.push_back(std::move(name));
    }
    have_header = true;
  }
  if (!have_header) throw DataError("empty file");

  const std::size_t width = t.names.size();
  std::vector<double> flat;
  std::vector<std::size_t> bad_dates;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split(line);
    if (cells.size() != width + 1)
      throw DataError("line " + std::to_string(lineno) + ": expected " +
                      std::to_string(width + 1) + " cells, found " +
                      std::to_string(cells.size()));
    if (!valid_iso_date(cells[0])) {
      bad_dates.push_back(lineno);
      continue;
    }
    std::vector<double> row(width);
    bool keep = true;
    for (std::size_t k = 0; k < width; ++k) {
      if (!detail::parse_number(cells[k + 1], row[k])) {
        const std::string what = cells[k + 1].empty() ? "blank cell" : "non-numeric cell";
        if (opt.missing == MissingPolicy::strict)
          throw DataError("line " + std::to_string(lineno) + ": " + what + " in column '" +
                          t.names[k] + "'");
        res.warnings.push_back("line " + std::to_string(lineno) + ": " + what +
                               " in column '" + t.names[k] + "', row dropped");
        keep = false;
        break;
      }
    }
    if (!keep) continue;
    const std::string date(cells[0]);
    if (!t.dates.empty() && date <= t.dates.back())
      throw DataError("line " + std::to_string(lineno) + ": date " + date +
                      (date == t.dates.back() ? " duplicated" : " out of order"));
    t.dates.push_back(date);
    flat.insert(flat.end(), row.begin(), row.end());
  }
  if (!bad_dates.empty()) {
    std::string msg = "unparseable dates on lines";
    for (auto l : bad_dates) msg += " " + std::to_string(l);
    throw DataError(msg);
  }
  if (t.dates.empty()) throw DataError("no data rows");
  t.values = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      flat.data(), static_cast<Eigen::Index>(t.dates.size()), static_cast<Eigen::Index>(width));
  return res;
}

inline LoadResult load_returns(const std::string& path, const LoadOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return parse_returns(in, opt);
}

inline void write_returns(const ReturnTable& t, std::ostream& out) {
  out << "date";
  for (const auto& n : t.names) out << ',' << n;
  out << '\n';
  for (Eigen::Index r = 0; r < t.rows(); ++r) {
    out << t.dates[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < t.values.cols(); ++c) out << ',' << format_double(t.values(r, c));
    out << '\n';
  }
}

inline std::string to_csv(const ReturnTable& t) {
  std::ostringstream os;
  write_returns(t, os);
  return os.str();
}

}  // namespace ccpde
