#include "prism/csv.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace prism::csv {

std::string format_double(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

Table::Table(std::vector<std::string> header) : header_(std::move(header)) {
    if (header_.empty()) throw std::invalid_argument("csv table needs at least one column");
}

void Table::add_row(std::vector<std::string> cells) {
    if (cells.size() != header_.size()) {
        throw std::invalid_argument("csv row has " + std::to_string(cells.size()) + " cells, header has " +
                                    std::to_string(header_.size()));
    }
    rows_.push_back(std::move(cells));
}

namespace {

void append_cell(std::string& out, const std::string& cell) {
    if (cell.find_first_of(",\"\n") == std::string::npos) {
        out += cell;
        return;
    }
    out.push_back('"');
    for (char c : cell) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
}

void append_line(std::string& out, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out.push_back(',');
        append_cell(out, cells[i]);
    }
    out.push_back('\n');
}

}  // namespace

std::string Table::to_string() const {
    std::string out;
    append_line(out, header_);
    for (const auto& r : rows_) append_line(out, r);
    return out;
}

void Table::write(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    const std::string text = to_string();
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

Table parse(const std::string& text) {
    std::vector<std::vector<std::string>> lines;
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    bool any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
                cell.push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cell.push_back(c);
            }
            continue;
        }
        any = true;
        if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.push_back(std::move(cell));
            cell.clear();
        } else if (c == '\n') {
            cells.push_back(std::move(cell));
            cell.clear();
            lines.push_back(std::move(cells));
            cells.clear();
            any = false;
        } else {
            cell.push_back(c);
        }
    }
    if (quoted) throw std::invalid_argument("csv: unterminated quoted cell");
    if (any) {
        cells.push_back(std::move(cell));
        lines.push_back(std::move(cells));
    }
    if (lines.empty()) throw std::invalid_argument("csv: no header line");
    Table t(lines.front());
    for (std::size_t i = 1; i < lines.size(); ++i) t.add_row(std::move(lines[i]));
    return t;
}

}  // namespace prism::csv
