#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace milbench::csv {

/// Minimal comma-separated reader: no quoting, header row required, blank
/// lines and lines starting with '#' skipped, trailing CR stripped.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Index of a header column, or -1.
    int column(std::string_view name) const;
    /// Index of a header column; throws Error{FormatError} if absent.
    std::size_t require_column(std::string_view name) const;
};

std::vector<std::string> split_line(std::string_view line);

Table parse(std::string_view text, const std::string& origin = "<memory>");

Table read_file(const std::filesystem::path& path);

/// Rejects fields that would break the unquoted format.
void check_field(std::string_view field);

} // namespace milbench::csv
