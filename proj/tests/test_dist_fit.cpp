#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pdm/dist_fit.hpp"
#include "pdm/errors.hpp"
#include "pdm/rng.hpp"
#include "test_support.hpp"

using namespace pdm;

TEST_CASE("standard quantiles of the three families") {
    CHECK(std_quantile(DistFamily::normal, 0.1) == doctest::Approx(-1.2815515655446004).epsilon(1e-9));
    CHECK(std_quantile(DistFamily::normal, 0.5) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(std_quantile(DistFamily::laplace, 0.1) == doctest::Approx(std::log(0.2)));
    CHECK(std_quantile(DistFamily::laplace, 0.9) == doctest::Approx(-std::log(0.2)));
    CHECK(std_quantile(DistFamily::cauchy, 0.75) == doctest::Approx(1.0));
    CHECK_THROWS_AS(std_quantile(DistFamily::normal, 0.0), ContractViolation);
}

TEST_CASE("cdf: closed-form spot checks") {
    RulDistribution normal{DistFamily::normal, 20.0, 5.0, false};
    CHECK(cdf(normal, 10.0) == doctest::Approx(0.0227501319).epsilon(1e-6));  // Phi(-2)
    CHECK(cdf(normal, 20.0) == doctest::Approx(0.5));

    RulDistribution laplace{DistFamily::laplace, 3.0, 2.0, false};
    CHECK(cdf(laplace, 3.0) == doctest::Approx(0.5));
    CHECK(cdf(laplace, 1.0) == doctest::Approx(0.5 * std::exp(-1.0)));

    RulDistribution cauchy{DistFamily::cauchy, 0.0, 1.0, false};
    CHECK(cdf(cauchy, 1.0) == doctest::Approx(0.75));
    CHECK(cdf(cauchy, 0.0) == doctest::Approx(0.5));
}

TEST_CASE("cdf bounds and monotonicity across random parameters") {
    Rng rng(23);
    const DistFamily fams[3] = {DistFamily::normal, DistFamily::laplace, DistFamily::cauchy};
    for (int rep = 0; rep < 300; ++rep) {
        RulDistribution d;
        d.family = fams[rep % 3];
        d.location = rng.uniform(-50.0, 150.0);
        d.scale = rng.uniform(0.01, 30.0);
        double x1 = rng.uniform(-200.0, 300.0);
        double x2 = rng.uniform(-200.0, 300.0);
        if (x1 > x2) std::swap(x1, x2);
        const double p1 = cdf(d, x1), p2 = cdf(d, x2);
        CHECK(p1 >= 0.0);
        CHECK(p2 <= 1.0);
        CHECK(p1 <= p2);
    }
}

TEST_CASE("fit: frozen quantiles of N(20,5) recover the parameters") {
    QuantileSet qs = QuantileSet::from_values({13.592, 17.378, 20.0, 22.622, 26.408});
    RulDistribution d = fit_distribution(qs, DistFamily::normal);
    CHECK(d.location == 20.0);  // location rule is exact
    CHECK(d.scale == doctest::Approx(5.0).epsilon(1e-3));
    CHECK_FALSE(d.degenerate);
}

TEST_CASE("fit: symmetric quantiles pin the location to the median") {
    QuantileSet qs = QuantileSet::from_values({1.0, 5.0, 9.0, 13.0, 17.0});
    CHECK(fit_distribution(qs, DistFamily::laplace).location == 9.0);
}

TEST_CASE("fit: equal quantiles degenerate to the scale floor") {
    QuantileSet qs = QuantileSet::from_values({7.0, 7.0, 7.0, 7.0, 7.0});
    RulDistribution d = fit_distribution(qs, DistFamily::cauchy);
    CHECK(d.location == 7.0);
    CHECK(d.scale == kScaleFloor);
    CHECK(d.degenerate);

    FitReport rep = compare_families(qs);
    // Errors collapse to the floor-scale residual, effectively zero.
    for (const auto& e : rep.entries) CHECK(e.abs_error < 1e-4);
    CHECK(rep.best == DistFamily::normal);  // tie-break
}

TEST_CASE("fit: refit fidelity on synthesized quantiles, oracle-independent") {
    Rng rng(29);
    for (int rep = 0; rep < 200; ++rep) {
        const double mu = rng.uniform(5.0, 125.0);
        const double sigma = rng.uniform(0.5, 20.0);
        const bool laplace = rep % 2 == 1;
        std::array<double, 5> v{};
        for (size_t i = 0; i < 5; ++i) {
            const double z = laplace ? test_support::oracle_laplace_ppf(kQuantileLevels[i])
                                     : test_support::oracle_normal_ppf(kQuantileLevels[i]);
            v[i] = mu + sigma * z;
        }
        QuantileSet qs = QuantileSet::from_values(v);
        RulDistribution d =
            fit_distribution(qs, laplace ? DistFamily::laplace : DistFamily::normal);
        CHECK(std::abs(d.scale - sigma) / sigma < 1e-3);
        CHECK(abs_refit_error(qs, d) < 1e-3);

        FitReport cmp = compare_families(qs);
        CHECK(cmp.best == (laplace ? DistFamily::laplace : DistFamily::normal));
    }
}

TEST_CASE("fit: refinement never worsens the least-squares initializer") {
    Rng rng(31);
    for (int rep = 0; rep < 100; ++rep) {
        // Noisy monotone quantiles that come from no family exactly.
        double base = rng.uniform(10.0, 60.0);
        std::array<double, 5> v{};
        double acc = base;
        for (size_t i = 0; i < 5; ++i) {
            acc += rng.uniform(0.1, 8.0);
            v[i] = acc;
        }
        QuantileSet qs = QuantileSet::from_values(v);
        for (DistFamily fam : {DistFamily::normal, DistFamily::laplace, DistFamily::cauchy}) {
            RulDistribution fitted = fit_distribution(qs, fam);
            // Recompute the documented closed-form initializer.
            double num = 0.0, den = 0.0;
            for (size_t i = 0; i < 5; ++i) {
                const double z = std_quantile(fam, kQuantileLevels[i]);
                num += (v[i] - qs.q50) * z;
                den += z * z;
            }
            RulDistribution init;
            init.family = fam;
            init.location = qs.q50;
            init.scale = std::max(num / den, kScaleFloor);
            CHECK(abs_refit_error(qs, fitted) <= abs_refit_error(qs, init) + 1e-12);
            CHECK(fitted.scale > 0.0);
        }
    }
}

TEST_CASE("build_state: constant N(20,5) distribution fills identical blocks") {
    RulDistribution d{DistFamily::normal, 20.0, 5.0, false};
    std::vector<RulDistribution> recent(5, d);
    ObservationState s = build_state(recent);
    for (int slot = 0; slot < kStateHistory; ++slot) {
        for (int k = 1; k <= kStateDepth; ++k) {
            const double expected =
                test_support::oracle_normal_cdf((static_cast<double>(k) - 20.0) / 5.0);
            CHECK(s(slot * kStateDepth + k - 1) == doctest::Approx(expected).epsilon(1e-9));
        }
    }
    CHECK(s(0) == doctest::Approx(test_support::oracle_normal_cdf(-3.8)).epsilon(1e-9));
    CHECK(s(9) == doctest::Approx(test_support::oracle_normal_cdf(-2.0)).epsilon(1e-9));
}

TEST_CASE("build_state: early-life padding repeats the oldest block") {
    RulDistribution d{DistFamily::laplace, 12.0, 3.0, false};
    ObservationState s = build_state({d});
    for (int slot = 1; slot < kStateHistory; ++slot)
        for (int k = 0; k < kStateDepth; ++k)
            CHECK(s(slot * kStateDepth + k) == s(k));
    CHECK_THROWS_AS(build_state({}), ContractViolation);
}

TEST_CASE("build_state: shape and within-block monotonicity across random inputs") {
    Rng rng(37);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<RulDistribution> recent;
        const int available = 1 + static_cast<int>(rng.uniform_int(5));
        for (int i = 0; i < available; ++i) {
            RulDistribution d;
            d.family = DistFamily::normal;
            d.location = rng.uniform(0.0, 40.0);
            d.scale = rng.uniform(0.1, 15.0);
            recent.push_back(d);
        }
        ObservationState s = build_state(recent);
        CHECK(s.size() == 50);
        for (int slot = 0; slot < kStateHistory; ++slot) {
            for (int k = 0; k < kStateDepth; ++k) {
                const double p = s(slot * kStateDepth + k);
                CHECK(p >= 0.0);
                CHECK(p <= 1.0);
                if (k > 0) CHECK(p >= s(slot * kStateDepth + k - 1));
            }
        }
    }
}

TEST_CASE("family name round trip") {
    for (DistFamily f : {DistFamily::normal, DistFamily::laplace, DistFamily::cauchy})
        CHECK(family_from_name(family_name(f)) == f);
    CHECK_THROWS_AS(family_from_name("uniform"), ConfigError);
}
