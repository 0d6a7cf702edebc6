#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace pdm::csv {

// Shortest representation that round-trips bit-exactly (std::to_chars).
std::string format_double(double v);
double parse_double(std::string_view s, int line);
long long parse_int(std::string_view s, int line);

std::vector<std::string_view> split_fields(std::string_view line);

class Writer {
public:
    explicit Writer(std::ostream& out) : out_(out) {}
    void header(const std::vector<std::string>& names);
    Writer& field(double v);
    Writer& field(long long v);
    Writer& field(int v) { return field(static_cast<long long>(v)); }
    Writer& field(const std::string& s);
    void end_row();

private:
    std::ostream& out_;
    bool row_started_ = false;
};

struct Row {
    int line = 0;  // 1-based source line
    std::vector<std::string> fields;
    double num(size_t i) const;
    long long integer(size_t i) const;
};

// Reads all rows; the first line is returned in `header`.
struct Table {
    std::vector<std::string> header;
    std::vector<Row> rows;
    int column(const std::string& name) const;  // throws IoError if absent
};

Table read_table(std::istream& in);
Table read_table_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);
std::string read_file(const std::string& path);

}  // namespace pdm::csv
