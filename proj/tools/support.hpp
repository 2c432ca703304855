#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ebdeconv/errors.hpp"
#include "ebdeconv/panel.hpp"
#include "json.hpp"

namespace cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fnv1a_hex(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ebd::ValidationError("cannot open input file: " + path.string());
  std::uint64_t h = 14695981039346656037ULL;
  char c;
  while (in.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;  // data rows, numbered from 1
};

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell.push_back(c);
    }
  }
  cells.push_back(cell);
  return cells;
}

inline Csv read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ebd::ValidationError("cannot open input file: " + path.string());
  Csv csv;
  std::string line;
  if (!std::getline(in, line))
    throw ebd::ValidationError("empty input file: " + path.string());
  csv.header = split_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    csv.rows.push_back(split_line(line));
  }
  return csv;
}

inline double parse_number(const std::string& cell, std::size_t row) {
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (cell.empty() || end != cell.c_str() + cell.size())
    throw ebd::ValidationError("non-numeric value '" + cell + "' in row " +
                               std::to_string(row));
  return v;
}

inline std::int64_t parse_integer(const std::string& cell, std::size_t row) {
  char* end = nullptr;
  const long long v = std::strtoll(cell.c_str(), &end, 10);
  if (cell.empty() || end != cell.c_str() + cell.size())
    throw ebd::ValidationError("non-integer value '" + cell + "' in row " +
                               std::to_string(row));
  return v;
}

inline void require_header(const Csv& csv, const std::vector<std::string>& expected,
                           const fs::path& path) {
  if (csv.header != expected) {
    std::string want;
    for (const auto& c : expected) want += (want.empty() ? "" : ",") + c;
    throw ebd::ValidationError("unexpected header in " + path.string() + "; expected '" +
                               want + "'");
  }
}

inline std::vector<double> ingest_observations(const fs::path& path) {
  const Csv csv = read_csv(path);
  require_header(csv, {"value"}, path);
  std::vector<double> values;
  values.reserve(csv.rows.size());
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    if (csv.rows[i].size() != 1)
      throw ebd::ValidationError("expected one column in row " + std::to_string(i + 1));
    values.push_back(parse_number(csv.rows[i][0], i + 1));
  }
  if (values.empty()) throw ebd::ValidationError("no observations in " + path.string());
  return values;
}

// Rows carry (unit_id, period, value); periods are sorted per unit and only
// their order matters. Duplicate (unit, period) pairs are rejected by data
// row number.
inline ebd::PanelDataset ingest_panel(const fs::path& path) {
  const Csv csv = read_csv(path);
  require_header(csv, {"unit_id", "period", "value"}, path);
  std::map<std::int64_t, std::map<std::int64_t, double>> units;
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    if (csv.rows[i].size() != 3)
      throw ebd::ValidationError("expected three columns in row " + std::to_string(i + 1));
    const std::int64_t unit = parse_integer(csv.rows[i][0], i + 1);
    const std::int64_t period = parse_integer(csv.rows[i][1], i + 1);
    const double value = parse_number(csv.rows[i][2], i + 1);
    const auto [it, inserted] = units[unit].emplace(period, value);
    (void)it;
    if (!inserted)
      throw ebd::ValidationError("duplicate (unit, period) key (" + std::to_string(unit) +
                                 ", " + std::to_string(period) + ") in row " +
                                 std::to_string(i + 1));
  }
  ebd::PanelDataset panel;
  for (const auto& [id, periods] : units) {
    ebd::PanelUnit u;
    u.id = id;
    for (const auto& [period, value] : periods) u.values.push_back(value);
    panel.units.push_back(std::move(u));
  }
  panel.validate();
  return panel;
}

// "a:b:step" -> inclusive sweep from a to b.
inline std::vector<double> parse_range(const std::string& spec) {
  const auto c1 = spec.find(':');
  const auto c2 = spec.find(':', c1 == std::string::npos ? c1 : c1 + 1);
  if (c1 == std::string::npos || c2 == std::string::npos)
    throw ebd::ValidationError("range '" + spec + "' must have the form a:b:step");
  const auto piece = [&](std::size_t from, std::size_t count) {
    const std::string cell = spec.substr(from, count);
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (cell.empty() || end != cell.c_str() + cell.size())
      throw ebd::ValidationError("range '" + spec + "' must be numeric a:b:step");
    return v;
  };
  const double a = piece(0, c1);
  const double b = piece(c1 + 1, c2 - c1 - 1);
  const double step = piece(c2 + 1, std::string::npos);
  if (!(step > 0.0)) throw ebd::ValidationError("range step must be positive");
  if (b < a) throw ebd::ValidationError("range end must not precede its start");
  std::vector<double> out;
  for (int k = 0;; ++k) {
    const double v = a + step * k;
    if (v > b + step * 1e-9) break;
    out.push_back(v);
  }
  return out;
}

// One directory per run: config echo first, then CSV artifacts, then a JSON
// summary. The config echo is sufficient to replay the run.
struct Report {
  fs::path dir;
  json config;
  json summary;

  Report(const std::string& out_dir, json cfg) : dir(out_dir), config(std::move(cfg)) {
    if (out_dir.empty()) throw ebd::ValidationError("--out directory is required");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ebd::ValidationError("cannot create report directory: " + dir.string());
    write_json("config.json", config);
    summary["inputs"] = json::object();
  }

  void digest_input(const fs::path& path) {
    summary["inputs"][path.string()] = fnv1a_hex(path);
  }

  void write_json(const std::string& name, const json& j) const {
    std::ofstream out(dir / name, std::ios::binary);
    out << j.dump(2) << '\n';
    if (!out) throw ebd::ValidationError("cannot write " + (dir / name).string());
  }

  void write_csv(const std::string& name, const std::vector<std::string>& header,
                 const std::vector<std::vector<double>>& rows) const {
    std::ofstream out(dir / name, std::ios::binary);
    for (std::size_t i = 0; i < header.size(); ++i)
      out << (i ? "," : "") << header[i];
    out << '\n';
    for (const auto& row : rows) {
      for (std::size_t i = 0; i < row.size(); ++i)
        out << (i ? "," : "") << format_double(row[i]);
      out << '\n';
    }
    if (!out) throw ebd::ValidationError("cannot write " + (dir / name).string());
  }

  void finish() const { write_json("summary.json", summary); }
};

inline void write_error_report(const std::string& out_dir, const std::string& type,
                               const std::string& message) {
  if (out_dir.empty()) return;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) return;
  json j;
  j["error"]["type"] = type;
  j["error"]["message"] = message;
  std::ofstream out(fs::path(out_dir) / "error.json", std::ios::binary);
  out << j.dump(2) << '\n';
}

}  // namespace cli
