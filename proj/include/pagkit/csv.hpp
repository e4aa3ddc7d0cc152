#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pagkit::csv {

/// Plain comma-separated rows; fields never contain commas or quotes.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column position by name; ParseError when absent.
  std::size_t column(std::string_view name) const;
};

/// Reads a headed CSV, skipping blank lines. `expected_header`, when given,
/// must match the first line exactly.
Table read(const std::filesystem::path& path, std::optional<std::string_view> expected_header = std::nullopt);

std::vector<std::string> split_line(std::string_view line);

/// Shortest round-trip decimal form.
std::string format_number(double x);

/// Fixed-point with the given number of decimals.
std::string format_fixed(double x, int decimals);

std::optional<double> parse_optional_double(std::string_view cell, std::string_view what);
std::optional<int> parse_optional_int(std::string_view cell, std::string_view what);

/// Writes text to a file, creating parent directories.
void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace pagkit::csv
