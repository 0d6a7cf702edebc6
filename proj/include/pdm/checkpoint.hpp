#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace pdm {

// Versioned binary container: magic, kind tag, format version, a JSON config
// echo, then named double arrays with shapes. Write/read round-trips
// bit-exactly (little-endian doubles, no padding, no timestamps).
class Checkpoint {
public:
    static constexpr uint32_t kFormatVersion = 1;

    Checkpoint() = default;
    Checkpoint(std::string kind, std::string config_json)
        : kind_(std::move(kind)), config_json_(std::move(config_json)) {}

    const std::string& kind() const { return kind_; }
    const std::string& config_json() const { return config_json_; }
    void set_config_json(std::string j) { config_json_ = std::move(j); }

    void add(const std::string& name, const Eigen::MatrixXd& m);
    void add(const std::string& name, const Eigen::VectorXd& v);
    void add_scalar(const std::string& name, double v);

    bool has(const std::string& name) const { return arrays_.count(name) > 0; }
    Eigen::MatrixXd matrix(const std::string& name) const;  // throws if absent
    Eigen::VectorXd vector(const std::string& name) const;
    double scalar(const std::string& name) const;

    std::vector<std::string> names() const;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

private:
    struct Array {
        uint32_t rows = 0, cols = 0;
        std::vector<double> data;  // column-major
    };
    std::string kind_;
    std::string config_json_;
    std::map<std::string, Array> arrays_;  // ordered -> stable file layout
};

}  // namespace pdm
