#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

namespace pdm {

// Flat view over one parameter (or gradient) tensor.
struct ParamView {
    std::string name;
    double* data = nullptr;
    Eigen::Index size = 0;
};

inline Eigen::Index total_size(const std::vector<ParamView>& views) {
    Eigen::Index n = 0;
    for (const auto& v : views) n += v.size;
    return n;
}

inline Eigen::VectorXd flatten(const std::vector<ParamView>& views) {
    Eigen::VectorXd out(total_size(views));
    Eigen::Index k = 0;
    for (const auto& v : views) {
        out.segment(k, v.size) = Eigen::Map<const Eigen::VectorXd>(v.data, v.size);
        k += v.size;
    }
    return out;
}

inline void unflatten(const Eigen::VectorXd& flat, std::vector<ParamView>& views) {
    Eigen::Index k = 0;
    for (auto& v : views) {
        Eigen::Map<Eigen::VectorXd>(v.data, v.size) = flat.segment(k, v.size);
        k += v.size;
    }
}

inline double global_norm(const std::vector<ParamView>& views) {
    double sq = 0.0;
    for (const auto& v : views) sq += Eigen::Map<const Eigen::VectorXd>(v.data, v.size).squaredNorm();
    return std::sqrt(sq);
}

inline void scale_all(std::vector<ParamView>& views, double factor) {
    for (auto& v : views) Eigen::Map<Eigen::VectorXd>(v.data, v.size) *= factor;
}

inline void clip_global_norm(std::vector<ParamView>& grads, double max_norm) {
    const double norm = global_norm(grads);
    if (norm > max_norm && norm > 0.0) scale_all(grads, max_norm / norm);
}

// Adaptive-moment updates over a fixed parameter layout.
class Adam {
public:
    Adam() = default;
    Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(std::vector<ParamView>& params, const std::vector<ParamView>& grads, double lr) {
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.push_back(Eigen::VectorXd::Zero(p.size));
                v_.push_back(Eigen::VectorXd::Zero(p.size));
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (size_t i = 0; i < params.size(); ++i) {
            Eigen::Map<Eigen::VectorXd> p(params[i].data, params[i].size);
            Eigen::Map<const Eigen::VectorXd> g(grads[i].data, grads[i].size);
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseAbs2();
            p.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps_);
        }
    }

    int64_t steps() const { return t_; }

private:
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    int64_t t_ = 0;
    std::vector<Eigen::VectorXd> m_, v_;
};

}  // namespace pdm
