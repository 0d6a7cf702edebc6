#pragma once

// Shared test helpers: finite-difference gradients, independent distribution
// oracles, and synthetic degradation traces.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "pdm/cmapss.hpp"
#include "pdm/params.hpp"
#include "pdm/rng.hpp"

namespace test_support {

// Central finite differences over a flat parameter layout. `f` re-evaluates
// the scalar objective from the (mutated) parameters.
inline Eigen::VectorXd finite_difference_gradient(std::vector<pdm::ParamView>& params,
                                                  const std::function<double()>& f,
                                                  double h = 1e-5) {
    const Eigen::VectorXd base = pdm::flatten(params);
    Eigen::VectorXd grad(base.size());
    Eigen::VectorXd work = base;
    for (Eigen::Index i = 0; i < base.size(); ++i) {
        work(i) = base(i) + h;
        pdm::unflatten(work, params);
        const double up = f();
        work(i) = base(i) - h;
        pdm::unflatten(work, params);
        const double down = f();
        grad(i) = (up - down) / (2.0 * h);
        work(i) = base(i);
    }
    pdm::unflatten(base, params);
    return grad;
}

// Relative error between gradient vectors for one parameter group.
inline double group_relative_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& fd) {
    return (analytic - fd).norm() / (fd.norm() + 1e-8);
}

// Independent standard-normal CDF/inverse used to synthesize quantiles without
// touching the library's quantile implementation.
inline double oracle_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double oracle_normal_ppf(double p) {
    double lo = -40.0, hi = 40.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (oracle_normal_cdf(mid) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

inline double oracle_laplace_ppf(double p) {
    return p < 0.5 ? std::log(2.0 * p) : -std::log(2.0 * (1.0 - p));
}

// Degradation-like trace: each signal mixes a health index h(c) = (L - c)/L
// with noise through a fixed fleet-wide gain pattern, so RUL is learnable
// from windows and generalizes across engines.
inline pdm::EngineTrace synthetic_trace(int engine_id, int lifespan, pdm::Rng& rng) {
    pdm::EngineTrace t;
    t.engine_id = engine_id;
    t.subset_tag = "SYN";
    t.signals.resize(lifespan, pdm::kSignalCount);
    for (int c = 1; c <= lifespan; ++c) {
        const double health = static_cast<double>(lifespan - c) / static_cast<double>(lifespan);
        for (int j = 0; j < pdm::kSignalCount; ++j) {
            const double gain = (0.5 + 0.06 * j) * (j % 2 == 0 ? 1.0 : -1.0);
            const double offset = 0.1 * j - 1.0;
            t.signals(c - 1, j) = offset + gain * health + 0.02 * rng.normal();
        }
    }
    return t;
}

inline std::vector<pdm::WindowSample> synthetic_window_set(int n_engines, int life_min,
                                                           int life_max, int window_size,
                                                           uint64_t seed) {
    pdm::Rng rng(seed);
    std::vector<pdm::WindowSample> all;
    for (int e = 1; e <= n_engines; ++e) {
        const int life =
            life_min + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(life_max - life_min + 1)));
        auto windows = pdm::make_windows(synthetic_trace(e, life, rng), window_size, 1, 125.0);
        all.insert(all.end(), windows.begin(), windows.end());
    }
    return all;
}

}  // namespace test_support
