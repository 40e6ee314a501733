// Copyright (c) 2026 the gradnorm authors
// Licensed under the Apache License 2.0.

#ifndef GRADNORM_CSV_HPP
#define GRADNORM_CSV_HPP

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "gradnorm/errors.hpp"

namespace gradnorm {

using CsvValue = std::variant<double, std::string>;

struct CsvTable {
    std::vector<std::string> columns;
    std::vector<std::vector<CsvValue>> rows;
};

/// Fixed-format real serialization: always >= 9 significant digits and
/// byte-stable across runs. Values in [0.1, 1e9) print as fixed-point with
/// nine decimals ("1.000000000"); everything else falls back to scientific
/// notation with nine decimals.
inline std::string format_real(double v) {
    char buf[48];
    if (v == 0.0) return "0.000000000";
    const double a = std::fabs(v);
    if (a >= 0.1 && a < 1e9) {
        std::snprintf(buf, sizeof(buf), "%.9f", v);
    } else {
        std::snprintf(buf, sizeof(buf), "%.9e", v);
    }
    return buf;
}

inline std::string csv_quote(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

/// Write a table as RFC-4180-style CSV with a header row.
inline void write_csv(const CsvTable& table, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open for writing: " + path);
    for (std::size_t i = 0; i < table.columns.size(); ++i) {
        if (i) out << ',';
        out << csv_quote(table.columns[i]);
    }
    out << '\n';
    for (const auto& row : table.rows) {
        if (row.size() != table.columns.size())
            throw io_error("csv row width does not match header: " + path);
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << ',';
            if (std::holds_alternative<double>(row[i]))
                out << format_real(std::get<double>(row[i]));
            else
                out << csv_quote(std::get<std::string>(row[i]));
        }
        out << '\n';
    }
    out.flush();
    if (!out) throw io_error("write failed: " + path);
}

/// Split one CSV record, honoring double-quote escaping. No embedded
/// newlines inside quoted fields (none of our writers produce them).
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c == '\r') {
            // tolerate CRLF input
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

/// Read a whole CSV file into header + string fields.
inline std::pair<std::vector<std::string>, std::vector<std::vector<std::string>>>
read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open for reading: " + path);
    std::string line;
    if (!std::getline(in, line)) throw io_error("empty csv file: " + path);
    auto header = split_csv_line(line);
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        rows.push_back(split_csv_line(line));
    }
    return {header, rows};
}

}  // namespace gradnorm

#endif  // GRADNORM_CSV_HPP
