#pragma once

#include <filesystem>
#include <initializer_list>
#include <string>
#include <vector>

namespace prism::csv {

// 17 significant digits, so the text round-trips to the same double.
std::string format_double(double x);

class Table {
public:
    explicit Table(std::vector<std::string> header);

    const std::vector<std::string>& header() const { return header_; }
    const std::vector<std::vector<std::string>>& rows() const { return rows_; }

    // Throws if the cell count differs from the header.
    void add_row(std::vector<std::string> cells);

    // Header line then one line per row, LF endings. Cells holding a comma,
    // quote or newline are quoted.
    std::string to_string() const;
    void write(const std::filesystem::path& path) const;

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

// Minimal reader for the tables written above.
Table parse(const std::string& text);

}  // namespace prism::csv
