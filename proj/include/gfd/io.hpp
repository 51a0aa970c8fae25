#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace gfd {

// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

// Shortest decimal form that parses back to the same double.
std::string format_double(double v);
// Strict parse of a whole field; throws ValidationError mentioning `where`.
double parse_double(std::string_view text, const std::string& where);
long parse_int(std::string_view text, const std::string& where);

std::vector<std::string_view> split_csv_line(std::string_view line);
std::vector<std::string_view> split_lines(std::string_view text);

struct GrayImage8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

GrayImage8 read_pgm(const std::filesystem::path& path);
std::string encode_pgm(const GrayImage8& image);
void write_pgm(const std::filesystem::path& path, const GrayImage8& image);

}  // namespace gfd
