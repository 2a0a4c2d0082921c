#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace aquadrift::csv {

// Minimal comma-separated table: a header row and string cells.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a header column; throws Error(Io) when absent.
  std::size_t column(const std::string& name) const;
};

Table read(const std::filesystem::path& path);
void write(const std::filesystem::path& path, const Table& table);

// Shortest decimal form that round-trips the double exactly.
std::string format_double(double value);
double parse_double(const std::string& cell);
long long parse_int(const std::string& cell);

}  // namespace aquadrift::csv
