#pragma once

// CSV and number-formatting helpers shared by the data and report writers.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ldm::io {

// Shortest representation that parses back to the same double.
std::string format_exact(double x);
// Fixed 9 significant digits, used for all report outputs.
std::string format_report(double x);

std::vector<std::string> split_csv_line(std::string_view line);

// Parses a full numeric cell; throws std::invalid_argument otherwise.
double parse_double(std::string_view cell);

std::vector<std::string> read_lines(const std::filesystem::path& path);
// Throws std::runtime_error if the file cannot be written.
void write_text(const std::filesystem::path& path, const std::string& content);

}  // namespace ldm::io
