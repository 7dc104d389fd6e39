#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace mixfc {

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

double parse_double(std::string_view field, std::size_t line);
std::int64_t parse_int(std::string_view field, std::size_t line);

struct CsvRow {
  std::size_t line = 0;  // 1-based, counting the header
  std::vector<std::string> fields;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<CsvRow> rows;
};

/// Comma-separated, no quoting. Throws DataError naming the line when a row's
/// field count differs from the header.
CsvTable read_csv(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace mixfc
