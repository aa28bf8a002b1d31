#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "nnad/types.hpp"

namespace nnad::io {

/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

std::string sha256_hex(const std::string& bytes);

/// Shortest decimal text that round-trips the double exactly.
std::string format_double(double v);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const;  // throws ParseError if absent
    double number(std::size_t row, int col) const;
};

std::string to_csv(const CsvTable& table);
CsvTable parse_csv(const std::string& text);
CsvTable read_csv(const std::filesystem::path& path);

}  // namespace nnad::io
