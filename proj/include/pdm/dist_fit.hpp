#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

namespace pdm {

inline constexpr std::array<double, 5> kQuantileLevels = {0.1, 0.3, 0.5, 0.7, 0.9};

// Predicted RUL values at the five quantile levels for one cycle.
struct QuantileSet {
    double q10 = 0, q30 = 0, q50 = 0, q70 = 0, q90 = 0;
    int engine_id = 0;
    int cycle = 0;

    std::array<double, 5> values() const { return {q10, q30, q50, q70, q90}; }
    static QuantileSet from_values(const std::array<double, 5>& v, int engine_id = 0, int cycle = 0);
};

enum class DistFamily { normal, laplace, cauchy };

std::string family_name(DistFamily f);
DistFamily family_from_name(const std::string& name);  // throws ConfigError

// Inverse CDF of the standard (location 0, scale 1) family member.
double std_quantile(DistFamily family, double q);

struct RulDistribution {
    DistFamily family = DistFamily::normal;
    double location = 0.0;  // cycles; fitted center (the 50th percentile)
    double scale = 1.0;     // cycles; > 0
    bool degenerate = false;
};

inline constexpr double kScaleFloor = 1e-6;

double cdf(const RulDistribution& dist, double x);

// Location is pinned to q50; scale minimizes the total absolute refit error
// sum_q |location + scale * F^-1(q) - y_q| via a closed-form least-squares
// initializer followed by derivative-free 1-D refinement. Scale floored at
// kScaleFloor; equal quantiles set the degenerate flag.
RulDistribution fit_distribution(const QuantileSet& qs, DistFamily family);

double abs_refit_error(const QuantileSet& qs, const RulDistribution& dist);

struct FitReport {
    struct Entry {
        DistFamily family;
        double scale;
        double abs_error;
    };
    std::array<Entry, 3> entries;  // normal, laplace, cauchy
    DistFamily best;               // argmin error, ties to Normal
};

FitReport compare_families(const QuantileSet& qs);

// Observation served to the agents: for the 5 most recent cycles
// (oldest -> newest), P(RUL <= k) for k = 1..10.
inline constexpr int kStateHistory = 5;
inline constexpr int kStateDepth = 10;
inline constexpr int kStateDim = kStateHistory * kStateDepth;

using ObservationState = Eigen::Matrix<double, kStateDim, 1>;

// `recent` holds the distributions for the available cycles, oldest first,
// newest last (1..5 entries). Early life is left-padded by repeating the
// oldest block.
ObservationState build_state(const std::vector<RulDistribution>& recent);

}  // namespace pdm
