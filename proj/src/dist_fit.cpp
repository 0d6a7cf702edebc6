#include "pdm/dist_fit.hpp"

#include <algorithm>
#include <cmath>

#include "pdm/errors.hpp"

namespace pdm {

QuantileSet QuantileSet::from_values(const std::array<double, 5>& v, int engine_id, int cycle) {
    QuantileSet qs;
    qs.q10 = v[0];
    qs.q30 = v[1];
    qs.q50 = v[2];
    qs.q70 = v[3];
    qs.q90 = v[4];
    qs.engine_id = engine_id;
    qs.cycle = cycle;
    return qs;
}

std::string family_name(DistFamily f) {
    switch (f) {
        case DistFamily::normal: return "normal";
        case DistFamily::laplace: return "laplace";
        case DistFamily::cauchy: return "cauchy";
    }
    return "?";
}

DistFamily family_from_name(const std::string& name) {
    if (name == "normal") return DistFamily::normal;
    if (name == "laplace") return DistFamily::laplace;
    if (name == "cauchy") return DistFamily::cauchy;
    throw ConfigError("unknown distribution family '" + name + "'");
}

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

// Wichura's PPND16 rational approximation for the standard normal inverse CDF
// (absolute error below 1e-15 over (0,1)).
double norm_ppf(double p) {
    if (!(p > 0.0 && p < 1.0)) throw ContractViolation("norm_ppf: p outside (0,1)");
    const double q = p - 0.5;
    double num, den, r;
    if (std::abs(q) <= 0.425) {
        r = 0.180625 - q * q;
        num = (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r +
                    6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r +
                  1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
                1.3314166789178437745e+2) * r + 3.3871328727963666080e+0);
        den = (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r +
                    3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r +
                  5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
                4.2313330701600911252e+1) * r + 1.0);
        return q * num / den;
    }
    r = q < 0.0 ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    double val;
    if (r <= 5.0) {
        r -= 1.6;
        num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                    2.41780725177450611770e-1) * r + 1.27045825245236838258e+0) * r +
                  3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r +
                4.63033784615654529590e+0) * r + 1.42343711074968357734e+0);
        den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                    1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
                  6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r +
                2.05319162663775882187e+0) * r + 1.0);
        val = num / den;
    } else {
        r -= 5.0;
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                    1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
                  2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r +
                5.46378491116411436990e+0) * r + 6.65790464350110377720e+0);
        den = (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                    1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
                  1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
                5.99832206555887937690e-1) * r + 1.0);
        val = num / den;
    }
    return q < 0.0 ? -val : val;
}

}  // namespace

double std_quantile(DistFamily family, double q) {
    if (!(q > 0.0 && q < 1.0)) throw ContractViolation("std_quantile: level outside (0,1)");
    switch (family) {
        case DistFamily::normal:
            return norm_ppf(q);
        case DistFamily::laplace:
            return q < 0.5 ? std::log(2.0 * q) : -std::log(2.0 * (1.0 - q));
        case DistFamily::cauchy:
            return std::tan(kPi * (q - 0.5));
    }
    throw ContractViolation("std_quantile: bad family");
}

double cdf(const RulDistribution& dist, double x) {
    const double z = (x - dist.location) / dist.scale;
    switch (dist.family) {
        case DistFamily::normal:
            return 0.5 * std::erfc(-z / std::sqrt(2.0));
        case DistFamily::laplace:
            return z < 0.0 ? 0.5 * std::exp(z) : 1.0 - 0.5 * std::exp(-z);
        case DistFamily::cauchy:
            return 0.5 + std::atan(z) / kPi;
    }
    throw ContractViolation("cdf: bad family");
}

double abs_refit_error(const QuantileSet& qs, const RulDistribution& dist) {
    const auto y = qs.values();
    double err = 0.0;
    for (size_t i = 0; i < kQuantileLevels.size(); ++i)
        err += std::abs(dist.location + dist.scale * std_quantile(dist.family, kQuantileLevels[i]) - y[i]);
    return err;
}

RulDistribution fit_distribution(const QuantileSet& qs, DistFamily family) {
    const auto y = qs.values();
    RulDistribution dist;
    dist.family = family;
    dist.location = qs.q50;

    double spread = 0.0;
    for (double v : y) spread = std::max(spread, std::abs(v - qs.q50));
    if (spread < 1e-12) {
        dist.scale = kScaleFloor;
        dist.degenerate = true;
        return dist;
    }

    std::array<double, 5> z{};
    for (size_t i = 0; i < kQuantileLevels.size(); ++i) z[i] = std_quantile(family, kQuantileLevels[i]);

    // Closed-form least-squares initializer for the scale.
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < z.size(); ++i) {
        num += (y[i] - dist.location) * z[i];
        den += z[i] * z[i];
    }
    double scale0 = den > 0.0 ? num / den : kScaleFloor;
    scale0 = std::max(scale0, kScaleFloor);

    auto objective = [&](double s) {
        double err = 0.0;
        for (size_t i = 0; i < z.size(); ++i) err += std::abs(dist.location + s * z[i] - y[i]);
        return err;
    };

    // The objective is convex piecewise-linear in the scale; golden-section
    // refinement over a bracket that covers every breakpoint.
    double hi = scale0;
    for (size_t i = 0; i < z.size(); ++i)
        if (z[i] != 0.0) hi = std::max(hi, (y[i] - dist.location) / z[i]);
    hi = hi * 1.5 + 1.0;
    double lo = kScaleFloor;

    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double x1 = b - inv_phi * (b - a);
    double x2 = a + inv_phi * (b - a);
    double f1 = objective(x1), f2 = objective(x2);
    for (int it = 0; it < 200 && (b - a) > 1e-14 * (1.0 + b); ++it) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = objective(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = objective(x2);
        }
    }
    double refined = 0.5 * (a + b);
    // Refinement never worsens the initializer.
    dist.scale = objective(refined) <= objective(scale0) ? refined : scale0;
    dist.scale = std::max(dist.scale, kScaleFloor);
    return dist;
}

FitReport compare_families(const QuantileSet& qs) {
    FitReport report;
    const std::array<DistFamily, 3> fams = {DistFamily::normal, DistFamily::laplace, DistFamily::cauchy};
    for (size_t i = 0; i < fams.size(); ++i) {
        RulDistribution d = fit_distribution(qs, fams[i]);
        report.entries[i] = {fams[i], d.scale, abs_refit_error(qs, d)};
    }
    size_t best = 0;  // ties resolve to Normal (listed first)
    for (size_t i = 1; i < fams.size(); ++i)
        if (report.entries[i].abs_error < report.entries[best].abs_error) best = i;
    report.best = fams[best];
    return report;
}

ObservationState build_state(const std::vector<RulDistribution>& recent) {
    if (recent.empty()) throw ContractViolation("build_state: no fitted distribution available");
    ObservationState state;
    const int available = static_cast<int>(recent.size());
    for (int slot = 0; slot < kStateHistory; ++slot) {
        // Left-pad early life by repeating the oldest available block.
        const int idx = std::max(0, available - kStateHistory + slot);
        const RulDistribution& d = recent[static_cast<size_t>(std::min(idx, available - 1))];
        for (int k = 1; k <= kStateDepth; ++k)
            state(slot * kStateDepth + (k - 1)) = cdf(d, static_cast<double>(k));
    }
    return state;
}

}  // namespace pdm
