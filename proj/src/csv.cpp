#include "pdm/csv.hpp"

#include <charconv>
#include <fstream>
#include <ostream>
#include <sstream>

#include "pdm/errors.hpp"

namespace pdm::csv {

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view s, int line) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ParseError(line, "expected number, got '" + std::string(s) + "'");
    return v;
}

long long parse_int(std::string_view s, int line) {
    long long v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ParseError(line, "expected integer, got '" + std::string(s) + "'");
    return v;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    size_t start = 0;
    while (true) {
        size_t pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

void Writer::header(const std::vector<std::string>& names) {
    for (size_t i = 0; i < names.size(); ++i) {
        if (i) out_ << ',';
        out_ << names[i];
    }
    out_ << '\n';
}

Writer& Writer::field(double v) {
    if (row_started_) out_ << ',';
    out_ << format_double(v);
    row_started_ = true;
    return *this;
}

Writer& Writer::field(long long v) {
    if (row_started_) out_ << ',';
    out_ << v;
    row_started_ = true;
    return *this;
}

Writer& Writer::field(const std::string& s) {
    if (row_started_) out_ << ',';
    out_ << s;
    row_started_ = true;
    return *this;
}

void Writer::end_row() {
    out_ << '\n';
    row_started_ = false;
}

double Row::num(size_t i) const {
    if (i >= fields.size()) throw ParseError(line, "missing column " + std::to_string(i));
    return parse_double(fields[i], line);
}

long long Row::integer(size_t i) const {
    if (i >= fields.size()) throw ParseError(line, "missing column " + std::to_string(i));
    return parse_int(fields[i], line);
}

int Table::column(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return static_cast<int>(i);
    throw IoError("csv: no column named '" + name + "'");
}

Table read_table(std::istream& in) {
    Table t;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto views = split_fields(line);
        if (lineno == 1) {
            for (auto v : views) t.header.emplace_back(v);
            continue;
        }
        Row r;
        r.line = lineno;
        r.fields.reserve(views.size());
        for (auto v : views) r.fields.emplace_back(v);
        t.rows.push_back(std::move(r));
    }
    return t;
}

Table read_table_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return read_table(in);
}

void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << contents;
    if (!out) throw IoError("write failed: " + path);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace pdm::csv
