#pragma once

// Minimal CSV reading/writing for the flat, unquoted tables the pipeline
// exchanges (sites, records, distance cache, metrics).

#include <charconv>
#include <fstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "regraph/errors.hpp"

namespace regraph::csv {

inline std::vector<std::string> split(std::string_view line, char sep = ',') {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(std::string_view text, std::string_view what) {
  auto s = trim(text);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) {
    throw DataError("cannot parse " + std::string(what) + " from '" + std::string(text) + "'");
  }
  return v;
}

inline long long parse_int(std::string_view text, std::string_view what) {
  auto s = trim(text);
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) {
    throw DataError("cannot parse integer " + std::string(what) + " from '" + std::string(text) + "'");
  }
  return v;
}

// Shortest round-trip representation; identical bytes for identical values.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) return "nan";
  return std::string(buf, ptr);
}

// Reads a CSV file, checks the header and hands each data row to `row`
// together with its 1-based line number.
template <typename RowFn>
void read_table(const std::string& path, const std::vector<std::string>& expected_header, RowFn row) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file, header required");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  auto header = split(line);
  for (auto& h : header) h = trim(h);
  if (header != expected_header) {
    std::string want;
    for (const auto& h : expected_header) want += (want.empty() ? "" : ",") + h;
    throw DataError(path + ": unexpected header, expected '" + want + "'");
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = split(line);
    if (fields.size() != expected_header.size()) {
      throw DataError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(expected_header.size()) +
                      " fields, got " + std::to_string(fields.size()));
    }
    try {
      row(fields, lineno);
    } catch (const DataError& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace regraph::csv
