#include "pagkit/csv.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <system_error>

#include "pagkit/error.hpp"

namespace pagkit::csv {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

}  // namespace

std::size_t Table::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  fail(ErrorCode::ParseError, "missing CSV column '" + std::string(name) + "'");
}

std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.emplace_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

Table read(const std::filesystem::path& path, std::optional<std::string_view> expected_header) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  Table t;
  std::string line;
  bool have_header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty()) continue;
    if (!have_header) {
      if (expected_header && view != *expected_header) {
        fail(ErrorCode::ParseError, path.string() + ": unexpected header '" + std::string(view) + "'");
      }
      t.header = split_line(view);
      have_header = true;
      continue;
    }
    auto fields = split_line(view);
    if (fields.size() != t.header.size()) {
      fail(ErrorCode::ParseError, path.string() + ":" + std::to_string(line_no) + ": expected " +
                                      std::to_string(t.header.size()) + " fields, got " +
                                      std::to_string(fields.size()));
    }
    t.rows.push_back(std::move(fields));
  }
  if (!have_header) fail(ErrorCode::ParseError, path.string() + ": empty CSV");
  return t;
}

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

std::string format_fixed(double x, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, x);
  return buf;
}

std::optional<double> parse_optional_double(std::string_view cell, std::string_view what) {
  if (cell.empty() || cell == "NA" || cell == "nan") return std::nullopt;
  double v = 0.0;
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
    fail(ErrorCode::ParseError, "bad number '" + std::string(cell) + "' in " + std::string(what));
  }
  return v;
}

std::optional<int> parse_optional_int(std::string_view cell, std::string_view what) {
  if (cell.empty() || cell == "NA") return std::nullopt;
  int v = 0;
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
    fail(ErrorCode::ParseError, "bad integer '" + std::string(cell) + "' in " + std::string(what));
  }
  return v;
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::IoError, "short write to " + path.string());
}

}  // namespace pagkit::csv
