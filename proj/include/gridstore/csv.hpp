#pragma once

#include "gridstore/errors.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace gridstore {

enum class ColumnType { Integer, Real, Text };

struct Column {
    std::string name;
    ColumnType type = ColumnType::Real;
};

using Schema = std::vector<Column>;
using Cell = std::variant<long long, double, std::string>;
using Row = std::vector<Cell>;

/// Shortest-safe decimal form: 17 significant digits, so every double
/// round-trips exactly.
inline std::string format_real(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_real(const std::string& s) {
    if (s.empty()) throw FormatError("empty numeric field");
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size()) throw FormatError("not a number: '" + s + "'");
    return v;
}

inline long long parse_integer(const std::string& s) {
    if (s.empty()) throw FormatError("empty integer field");
    errno = 0;
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (end != s.c_str() + s.size() || errno == ERANGE) throw FormatError("not an integer: '" + s + "'");
    return v;
}

namespace detail {

inline bool plain_field(const std::string& s) {
    return s.find_first_of(",\n\r\"") == std::string::npos;
}

}  // namespace detail

/// Checks every row against the schema: arity, cell types, and text cells
/// free of separators.
inline void validate_rows(const std::vector<Row>& rows, const Schema& schema) {
    if (schema.empty()) throw FormatError("empty CSV schema");
    for (const auto& c : schema) {
        if (c.name.empty() || !detail::plain_field(c.name)) throw FormatError("bad column name '" + c.name + "'");
    }
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != schema.size()) {
            throw FormatError("row " + std::to_string(r) + " has " + std::to_string(rows[r].size()) +
                              " fields, schema has " + std::to_string(schema.size()));
        }
        for (std::size_t c = 0; c < schema.size(); ++c) {
            const auto& cell = rows[r][c];
            const bool ok = (schema[c].type == ColumnType::Integer && std::holds_alternative<long long>(cell)) ||
                            (schema[c].type == ColumnType::Real && std::holds_alternative<double>(cell)) ||
                            (schema[c].type == ColumnType::Text && std::holds_alternative<std::string>(cell));
            if (!ok) throw FormatError("row " + std::to_string(r) + " column '" + schema[c].name + "' has the wrong type");
            if (const auto* s = std::get_if<std::string>(&cell); s && !detail::plain_field(*s)) {
                throw FormatError("text in column '" + schema[c].name + "' contains a separator");
            }
        }
    }
}

/// Comment lines (each prefixed "# "), the header, then one line per row.
inline void write_csv(std::ostream& out, const std::vector<Row>& rows, const Schema& schema,
                      const std::vector<std::string>& comments = {}) {
    validate_rows(rows, schema);
    for (const auto& c : comments) {
        if (c.find('\n') != std::string::npos) throw FormatError("comment spans lines");
        out << "# " << c << '\n';
    }
    for (std::size_t c = 0; c < schema.size(); ++c) out << (c ? "," : "") << schema[c].name;
    out << '\n';
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c) out << ',';
            std::visit(
                [&](const auto& v) {
                    using T = std::decay_t<decltype(v)>;
                    if constexpr (std::is_same_v<T, double>) {
                        out << format_real(v);
                    } else {
                        out << v;
                    }
                },
                row[c]);
        }
        out << '\n';
    }
}

/// Writes to a sibling temporary and renames it into place, so a failed
/// write never leaves a truncated file at `path`.
inline void write_csv(const std::filesystem::path& path, const std::vector<Row>& rows, const Schema& schema,
                      const std::vector<std::string>& comments = {}) {
    validate_rows(rows, schema);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        write_csv(out, rows, schema, comments);
        out.flush();
        if (!out) {
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw IoError("write failed for " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot move " + tmp.string() + " to " + path.string());
    }
}

struct CsvTable {
    std::vector<std::string> comments;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return i;
        }
        throw FormatError("no column '" + name + "'");
    }

    double real(std::size_t row, const std::string& name) const { return parse_real(rows.at(row).at(column(name))); }
    const std::string& text(std::size_t row, const std::string& name) const { return rows.at(row).at(column(name)); }
};

inline CsvTable read_csv(std::istream& in) {
    CsvTable t;
    std::string line;
    bool have_header = false;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!have_header && line.rfind("# ", 0) == 0) {
            t.comments.push_back(line.substr(2));
            continue;
        }
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        if (!line.empty() && line.back() == ',') fields.emplace_back();
        if (!have_header) {
            t.header = std::move(fields);
            have_header = true;
            continue;
        }
        if (fields.size() != t.header.size()) {
            throw FormatError("csv line " + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
                              " fields, found " + std::to_string(fields.size()));
        }
        t.rows.push_back(std::move(fields));
    }
    if (!have_header) throw FormatError("csv has no header");
    return t;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return read_csv(in);
}

}  // namespace gridstore
