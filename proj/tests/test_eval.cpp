#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>

#include "pdm/errors.hpp"
#include "pdm/eval.hpp"
#include "test_support.hpp"

using namespace pdm;

namespace {

ReplacementRecord scheduled(int rul, int inspections = 3, int stop_cycle = 120) {
    return ReplacementRecord{1, rul, false, inspections, stop_cycle};
}

ReplacementRecord unscheduled_record(int inspections = 2, int stop_cycle = 150) {
    return ReplacementRecord{1, 0, true, inspections, stop_cycle};
}

// An actor pair that replaces exactly when the newest block indicates RUL 1
// (p1 + p2 >= 1.2 under the perfect predictor) and inspects every cycle.
PpoModel rul1_oracle_policy() {
    PpoModel model = make_ppo_model(1);
    Mlp detector;
    detector.w.push_back(Eigen::MatrixXd::Zero(1, kStateDim));
    detector.w[0](0, 4 * kStateDepth + 0) = 10.0;  // newest-block p1
    detector.w[0](0, 4 * kStateDepth + 1) = 10.0;  // newest-block p2
    detector.b.push_back(Eigen::VectorXd::Constant(1, -12.0));
    Eigen::MatrixXd w2(2, 1);
    w2 << 0.0, 20.0;
    detector.w.push_back(w2);
    detector.b.push_back(Eigen::VectorXd::Zero(2));
    model.actor_replace = detector;
    // actor_inspect stays zero-initialized: greedy gap 1.
    return model;
}

}  // namespace

TEST_CASE("record cost: boundary buckets are exact") {
    CHECK(record_cost(scheduled(1)) == 1.0);
    CHECK(record_cost(scheduled(5)) == 1.0);
    CHECK(record_cost(scheduled(6)) == 2.0);
    CHECK(record_cost(scheduled(10)) == 2.0);
    CHECK(record_cost(scheduled(11)) == 3.0);
    CHECK(record_cost(scheduled(20)) == 3.0);
    CHECK(record_cost(scheduled(21)) == 10.0);
    CHECK(record_cost(scheduled(125)) == 10.0);
    CHECK(record_cost(unscheduled_record()) == 20.0);
    CHECK_THROWS_AS(record_cost(scheduled(0)), IntegrityError);
}

TEST_CASE("compute_cost: worked example") {
    CHECK(compute_cost({scheduled(3), scheduled(10), scheduled(31)}) == doctest::Approx(13.0));
}

TEST_CASE("baselines: ideal and corrective reproduce the reference costs") {
    MetricsReport ideal = baseline("ideal", 130);
    CHECK(ideal.total_cost == doctest::Approx(130.0));
    CHECK(ideal.ur == 0);
    CHECK(ideal.sre == 130);
    MetricsReport corrective = baseline("corrective", 130);
    CHECK(corrective.total_cost == doctest::Approx(2600.0));
    CHECK(corrective.ur == 130);
    CHECK(baseline("ideal", 0).total_cost == 0.0);
    CHECK_THROWS_AS(baseline("weird", 5), ConfigError);
}

TEST_CASE("compute_metrics: worked examples") {
    MetricsReport r = compute_metrics({scheduled(3), scheduled(10), scheduled(31)});
    CHECK(r.sre == 2);
    CHECK(r.wre == 1);
    CHECK(r.ur == 0);
    CHECK(r.mean_rul == doctest::Approx(14.0 + 2.0 / 3.0));

    MetricsReport single = compute_metrics({scheduled(7)});
    CHECK(single.mean_rul == 7.0);
    CHECK(single.median_rul == 7.0);
    CHECK(single.max_rul == 7.0);
    CHECK(single.min_rul == 7.0);
    CHECK(single.std_rul == 0.0);

    MetricsReport empty = compute_metrics({});
    CHECK(empty.total_engines == 0);
    CHECK(std::isnan(empty.mean_rul));
    CHECK(empty.total_cost == 0.0);
}

TEST_CASE("compute_metrics: bucket partition and cost dominance properties") {
    Rng rng(5);
    for (int rep = 0; rep < 40; ++rep) {
        std::vector<ReplacementRecord> records;
        const int n = 1 + static_cast<int>(rng.uniform_int(60));
        for (int i = 0; i < n; ++i) {
            if (rng.uniform() < 0.25) records.push_back(unscheduled_record());
            else records.push_back(scheduled(1 + static_cast<int>(rng.uniform_int(180))));
        }
        MetricsReport r = compute_metrics(records);
        CHECK(r.sre + r.ur + r.wre == n);
        CHECK(r.bucket_le5 + r.bucket_le10 + r.bucket_le20 + r.bucket_gt20 + r.ur == n);
        CHECK(r.total_cost >= static_cast<double>(n));         // ideal bound
        CHECK(r.total_cost <= 20.0 * static_cast<double>(n));  // corrective bound
        if (r.sre + r.wre > 0) {
            CHECK(r.min_rul <= r.median_rul);
            CHECK(r.median_rul <= r.max_rul);
        }
    }
}

TEST_CASE("metrics report: json and csv round trips") {
    MetricsReport r = compute_metrics({scheduled(3), scheduled(12), unscheduled_record()});
    r.seed = 99;
    r.reward_config_json = RewardConfig{}.to_json();
    r.notes = "unit";
    const std::string json = metrics_to_json(r);
    MetricsReport back = metrics_from_json(json);
    CHECK(back.total_engines == r.total_engines);
    CHECK(back.sre == r.sre);
    CHECK(back.ur == r.ur);
    CHECK(back.mean_rul == doctest::Approx(r.mean_rul));
    CHECK(back.total_cost == r.total_cost);
    CHECK(back.seed == r.seed);
    CHECK(metrics_to_json(back) == json);  // byte-stable re-emit

    const std::string row = metrics_to_csv_row(r);
    CHECK(row.find("unit") != std::string::npos);
    CHECK(metrics_csv_header().find("total_cost") != std::string::npos);
}

TEST_CASE("threshold sweep: oracle predictor replaces exactly at the threshold") {
    std::vector<PredictionSeries> series;
    for (int life : {150, 201, 260}) {
        PredictionSeries s;
        s.engine_id = life;
        s.first_cycle = 60;
        for (int c = 60; c <= life; ++c) {
            s.q50.push_back(static_cast<double>(life - c));
            s.true_rul.push_back(static_cast<double>(life - c));
        }
        series.push_back(std::move(s));
    }
    SweepResult sweep = threshold_policy_sweep(series, 4, 15);
    CHECK(sweep.smallest_ur_free_threshold == 4);
    for (const auto& row : sweep.rows) {
        CHECK(row.ur == 0);
        CHECK(row.avg_rul == doctest::Approx(static_cast<double>(row.threshold)));
        CHECK(row.avg_rul_scheduled == doctest::Approx(static_cast<double>(row.threshold)));
    }
}

TEST_CASE("threshold sweep: constant +3 bias replaces at true RUL 1 under threshold 4") {
    PredictionSeries s;
    s.engine_id = 1;
    s.first_cycle = 60;
    for (int c = 60; c <= 200; ++c) {
        const double rul = static_cast<double>(200 - c);
        s.q50.push_back(rul + 3.0);
        s.true_rul.push_back(rul);
    }
    SweepResult sweep = threshold_policy_sweep({s}, 4, 4);
    CHECK(sweep.rows[0].ur == 0);
    CHECK(sweep.rows[0].avg_rul == doctest::Approx(1.0));
}

TEST_CASE("threshold sweep: monotone UR and average RUL on noisy predictors") {
    Rng rng(7);
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<PredictionSeries> series;
        for (int e = 0; e < 30; ++e) {
            const int life = 120 + static_cast<int>(rng.uniform_int(150));
            PredictionSeries s;
            s.engine_id = e;
            s.first_cycle = 60;
            const double bias = rng.uniform(-6.0, 6.0);
            for (int c = 60; c <= life; ++c) {
                const double rul = static_cast<double>(life - c);
                s.q50.push_back(std::max(0.0, rul + bias + 2.0 * rng.normal()));
                s.true_rul.push_back(rul);
            }
            series.push_back(std::move(s));
        }
        SweepResult sweep = threshold_policy_sweep(series, 4, 15);
        for (size_t i = 1; i < sweep.rows.size(); ++i) {
            CHECK(sweep.rows[i].ur <= sweep.rows[i - 1].ur);
            CHECK(sweep.rows[i].avg_rul >= sweep.rows[i - 1].avg_rul - 1e-12);
        }
    }
}

TEST_CASE("run_policy: never-replace policy turns every engine into a UR") {
    auto provider = std::make_shared<OracleStateProvider>(
        OracleStateProvider::sample_lifespans(6, 80, 140, 3), 0.0);
    MaintenanceEnv env(provider, RewardConfig{}, MaintenanceEnv::Mode::evaluation, 1);
    PpoModel never = make_ppo_model(1);  // uniform ties keep a_r = 0, gap 1
    RunResult run = run_policy(env, never, 6);
    REQUIRE(run.records.size() == 6);
    for (const auto& rec : run.records) CHECK(rec.unscheduled);
    MetricsReport report = compute_metrics(run.records);
    CHECK(report.ur == 6);
    CHECK(report.total_cost == doctest::Approx(120.0));
    CHECK(report.mean_inspection_period == doctest::Approx(1.0));
}

TEST_CASE("run_policy: oracle detector replaces every engine at RUL 1") {
    auto provider = std::make_shared<OracleStateProvider>(
        OracleStateProvider::sample_lifespans(5, 80, 140, 9), 0.0);
    MaintenanceEnv env(provider, RewardConfig{}, MaintenanceEnv::Mode::evaluation, 1);
    PpoModel oracle_policy = rul1_oracle_policy();
    RunResult run = run_policy(env, oracle_policy, 5);
    REQUIRE(run.records.size() == 5);
    for (const auto& rec : run.records) {
        CHECK_FALSE(rec.unscheduled);
        CHECK(rec.rul_at_stop == 1);
    }
    MetricsReport report = compute_metrics(run.records);
    CHECK(report.total_cost == doctest::Approx(5.0));  // minimal bucket

    // Inspection-period consistency: period * inspections ~ cycles after the
    // first decision point, within one cycle.
    double cycles = 0.0, inspections = 0.0;
    for (const auto& rec : run.records) {
        cycles += rec.cycles_run - MaintenanceEnv::kFirstDecisionCycle;
        inspections += rec.inspections;
    }
    CHECK(report.mean_inspection_period * (inspections / 5.0) ==
          doctest::Approx(cycles / 5.0).epsilon(1e-9));
}

TEST_CASE("run logs and curves serialize deterministically") {
    auto provider = std::make_shared<OracleStateProvider>(
        OracleStateProvider::sample_lifespans(3, 80, 120, 5), 0.0);
    MaintenanceEnv env(provider, RewardConfig{}, MaintenanceEnv::Mode::evaluation, 2);
    PpoModel policy = make_ppo_model(2);
    RunResult run = run_policy(env, policy, 3);
    const std::string log1 = runlog_to_csv(run);
    CHECK(log1.find("engine_id,cycle,rho") == 0);

    MaintenanceEnv env2(provider, RewardConfig{}, MaintenanceEnv::Mode::evaluation, 2);
    RunResult run2 = run_policy(env2, policy, 3);
    CHECK(runlog_to_csv(run2) == log1);

    TrainCurves curves;
    curves.combined_reward = {1.5, 2.5};
    curves.replace_reward = {1.0, 2.0};
    curves.inspect_reward = {0.5, 0.5};
    const std::string csv = curves_to_csv(curves);
    CHECK(csv.find("iteration,combined_reward") == 0);
    CHECK(csv.find("1,2.5,2,0.5") != std::string::npos);
}
