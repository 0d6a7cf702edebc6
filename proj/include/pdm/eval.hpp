#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pdm/env.hpp"
#include "pdm/ppo.hpp"

namespace pdm {

struct DecisionLogRow {
    int engine_id = 0;
    int cycle = 0;
    double rho = 0.0;
    int action_replace = 0;
    int action_gap = 0;
    double r_replace = 0.0;
    double r_inspect = 0.0;
    double combined = 0.0;
    bool replaced = false, unscheduled = false, new_engine = false;
};

struct RunResult {
    std::vector<ReplacementRecord> records;
    std::vector<DecisionLogRow> log;
    std::vector<int> gaps;  // agent-2 gaps at continued steps
};

// Greedy rollout until n_engines are consumed; deterministic given the
// environment seed. Throws ContractViolation on a state/policy size mismatch.
RunResult run_policy(MaintenanceEnv& env, const PpoModel& policy, int n_engines);

struct MetricsReport {
    long long total_engines = 0;
    long long sre = 0;  // scheduled with RUL in (0, 30]
    long long ur = 0;   // unscheduled
    long long wre = 0;  // scheduled with RUL > 30
    // RUL statistics over scheduled replacements (NaN when there are none).
    double mean_rul = 0.0, std_rul = 0.0, max_rul = 0.0, min_rul = 0.0, median_rul = 0.0;
    long long bucket_le5 = 0, bucket_le10 = 0, bucket_le20 = 0, bucket_gt20 = 0;
    double mean_inspection_period = 0.0;  // NaN when no inspections happened
    double total_cost = 0.0;
    double cost_fraction = 0.0;  // total_cost / (20 * total_engines)
    // Run metadata (filled by the caller).
    uint64_t seed = 0;
    std::string reward_config_json;
    std::string notes;
};

MetricsReport compute_metrics(const std::vector<ReplacementRecord>& records);

// Replacement cost: (0,5] -> 1, (5,10] -> 2, (10,20] -> 3, above 20 -> 10,
// unscheduled -> 20. A scheduled record with RUL <= 0 is an integrity error.
double compute_cost(const std::vector<ReplacementRecord>& records);
double record_cost(const ReplacementRecord& record);

MetricsReport baseline(const std::string& kind, int n);  // "ideal" or "corrective"

// Per-engine median-prediction series for threshold policies: entry i is the
// prediction at cycle first_cycle + i paired with the true RUL there.
struct PredictionSeries {
    int engine_id = 0;
    int first_cycle = 0;
    std::vector<double> q50;
    std::vector<double> true_rul;
};

struct SweepRow {
    int threshold = 0;
    long long ur = 0;
    long long bucket_le5 = 0, bucket_le10 = 0, bucket_le20 = 0, bucket_gt20 = 0;
    double avg_rul = 0.0;            // unscheduled engines counted at 0
    double avg_rul_scheduled = 0.0;  // replaced engines only (NaN if none)
};

struct SweepResult {
    std::vector<SweepRow> rows;
    int smallest_ur_free_threshold = -1;
};

// Inspect-every-cycle policy: replace at the first cycle where the median
// prediction drops to the threshold. Sweeps thresholds min..max inclusive.
SweepResult threshold_policy_sweep(const std::vector<PredictionSeries>& series,
                                   int min_threshold = 4, int max_threshold = 15);

// Serialization: stable field order, deterministic float formatting.
std::string metrics_to_json(const MetricsReport& report);
MetricsReport metrics_from_json(const std::string& json);
std::string metrics_csv_header();
std::string metrics_to_csv_row(const MetricsReport& report);
std::string runlog_to_csv(const RunResult& run);
std::string curves_to_csv(const TrainCurves& curves);
std::string sweep_to_csv(const SweepResult& sweep);

}  // namespace pdm
