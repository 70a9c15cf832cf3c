#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace tcgpn {

// Minimal helpers for the plain (unquoted) CSV files this project reads and writes.

std::vector<std::string> split_csv_line(std::string_view line);

/// Throws std::invalid_argument naming `line_no` when `text` is not a finite number.
double parse_double(std::string_view text, std::size_t line_no);
std::size_t parse_size(std::string_view text, std::size_t line_no);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace tcgpn
