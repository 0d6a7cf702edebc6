#include "pdm/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "pdm/errors.hpp"

namespace pdm {

namespace {

constexpr char kMagic[8] = {'P', 'D', 'M', 'C', 'K', 'P', 'T', '\0'};

void write_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw IoError("checkpoint: truncated file");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void write_string(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
    uint32_t n = read_u32(in);
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw IoError("checkpoint: truncated string");
    return s;
}

}  // namespace

void Checkpoint::add(const std::string& name, const Eigen::MatrixXd& m) {
    Array a;
    a.rows = static_cast<uint32_t>(m.rows());
    a.cols = static_cast<uint32_t>(m.cols());
    a.data.assign(m.data(), m.data() + m.size());
    arrays_[name] = std::move(a);
}

void Checkpoint::add(const std::string& name, const Eigen::VectorXd& v) {
    Array a;
    a.rows = static_cast<uint32_t>(v.size());
    a.cols = 1;
    a.data.assign(v.data(), v.data() + v.size());
    arrays_[name] = std::move(a);
}

void Checkpoint::add_scalar(const std::string& name, double v) {
    Array a;
    a.rows = 1;
    a.cols = 1;
    a.data = {v};
    arrays_[name] = std::move(a);
}

Eigen::MatrixXd Checkpoint::matrix(const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw IoError("checkpoint: missing array '" + name + "'");
    const Array& a = it->second;
    Eigen::MatrixXd m(a.rows, a.cols);
    std::memcpy(m.data(), a.data.data(), a.data.size() * sizeof(double));
    return m;
}

Eigen::VectorXd Checkpoint::vector(const std::string& name) const {
    Eigen::MatrixXd m = matrix(name);
    if (m.cols() != 1) throw IoError("checkpoint: array '" + name + "' is not a vector");
    return m.col(0);
}

double Checkpoint::scalar(const std::string& name) const {
    Eigen::MatrixXd m = matrix(name);
    if (m.size() != 1) throw IoError("checkpoint: array '" + name + "' is not a scalar");
    return m(0, 0);
}

std::vector<std::string> Checkpoint::names() const {
    std::vector<std::string> out;
    out.reserve(arrays_.size());
    for (const auto& [k, v] : arrays_) out.push_back(k);
    return out;
}

void Checkpoint::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write(kMagic, sizeof(kMagic));
    write_u32(out, kFormatVersion);
    write_string(out, kind_);
    write_string(out, config_json_);
    write_u32(out, static_cast<uint32_t>(arrays_.size()));
    for (const auto& [name, a] : arrays_) {
        write_string(out, name);
        write_u32(out, a.rows);
        write_u32(out, a.cols);
        out.write(reinterpret_cast<const char*>(a.data.data()),
                  static_cast<std::streamsize>(a.data.size() * sizeof(double)));
    }
    if (!out) throw IoError("write failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError("not a checkpoint file: " + path);
    uint32_t version = read_u32(in);
    if (version > kFormatVersion)
        throw IoError("checkpoint version " + std::to_string(version) + " is newer than supported");
    Checkpoint ckpt;
    ckpt.kind_ = read_string(in);
    ckpt.config_json_ = read_string(in);
    uint32_t n = read_u32(in);
    for (uint32_t i = 0; i < n; ++i) {
        std::string name = read_string(in);
        Array a;
        a.rows = read_u32(in);
        a.cols = read_u32(in);
        a.data.resize(static_cast<size_t>(a.rows) * a.cols);
        in.read(reinterpret_cast<char*>(a.data.data()),
                static_cast<std::streamsize>(a.data.size() * sizeof(double)));
        if (!in) throw IoError("checkpoint: truncated array '" + name + "'");
        ckpt.arrays_[name] = std::move(a);
    }
    return ckpt;
}

}  // namespace pdm
