#include "milbench/csv.hpp"

#include <fstream>
#include <sstream>

#include "milbench/error.hpp"

namespace milbench::csv {

int Table::column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) {
            return static_cast<int>(i);
        }
    }
    return -1;
}

std::size_t Table::require_column(std::string_view name) const {
    const int idx = column(name);
    if (idx < 0) {
        fail(ErrorCode::FormatError, "missing CSV column '" + std::string(name) + "'");
    }
    return static_cast<std::size_t>(idx);
}

std::vector<std::string> split_line(std::string_view line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            fields.emplace_back(line.substr(start));
            break;
        }
        fields.emplace_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return fields;
}

Table parse(std::string_view text, const std::string& origin) {
    Table table;
    bool have_header = false;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        if (line.empty() || line.front() == '#') {
            if (end == text.size()) {
                break;
            }
            continue;
        }
        auto fields = split_line(line);
        if (!have_header) {
            table.header = std::move(fields);
            have_header = true;
        } else {
            if (fields.size() != table.header.size()) {
                fail(ErrorCode::FormatError, origin + ":" + std::to_string(line_no) + ": expected " +
                                                 std::to_string(table.header.size()) + " fields, got " +
                                                 std::to_string(fields.size()));
            }
            table.rows.push_back(std::move(fields));
        }
        if (end == text.size()) {
            break;
        }
    }
    if (!have_header) {
        fail(ErrorCode::FormatError, origin + ": missing header row");
    }
    return table;
}

Table read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorCode::StorageError, "cannot open " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str(), path.string());
}

void check_field(std::string_view field) {
    if (field.find_first_of(",\n\r") != std::string_view::npos) {
        fail(ErrorCode::InvalidInput, "field contains a separator: '" + std::string(field) + "'");
    }
}

} // namespace milbench::csv
