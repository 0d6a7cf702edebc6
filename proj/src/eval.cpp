#include "pdm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "pdm/csv.hpp"
#include "pdm/errors.hpp"

namespace pdm {

namespace {
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
}

RunResult run_policy(MaintenanceEnv& env, const PpoModel& policy, int n_engines) {
    if (policy.actor_replace.input() != kStateDim)
        throw ContractViolation("run_policy: policy/state dimension mismatch");
    RunResult result;
    env.reset();
    const long long target = env.engines_consumed() + n_engines;
    // A gap of at least 1 per step bounds the decision count per engine.
    const long long step_limit = static_cast<long long>(n_engines) * 100000;
    long long steps = 0;
    while (env.engines_consumed() < target) {
        if (++steps > step_limit) throw ModelStateError("run_policy: step limit exceeded");
        const ObservationState state = env.observation();
        auto [a_r, gap] = act_greedy(policy, state);
        StepOutcome out = env.step(a_r, gap);
        DecisionLogRow row;
        row.engine_id = out.engine_id;
        row.cycle = out.cycle;
        row.rho = out.rho_at_decision;
        row.action_replace = a_r;
        row.action_gap = gap;
        row.r_replace = out.r_replace;
        row.r_inspect = out.r_inspect;
        row.combined = out.combined;
        row.replaced = out.replaced;
        row.unscheduled = out.unscheduled;
        row.new_engine = out.new_engine;
        result.log.push_back(row);
        if (out.continued) result.gaps.push_back(out.gap);
        if (out.terminal) result.records.push_back(out.record);
    }
    return result;
}

double record_cost(const ReplacementRecord& record) {
    if (record.unscheduled) return 20.0;
    if (record.rul_at_stop <= 0)
        throw IntegrityError("cost: scheduled record with RUL <= 0 (engine " +
                             std::to_string(record.engine_id) + ")");
    const int rul = record.rul_at_stop;
    if (rul <= 5) return 1.0;
    if (rul <= 10) return 2.0;
    if (rul <= 20) return 3.0;
    return 10.0;
}

double compute_cost(const std::vector<ReplacementRecord>& records) {
    double total = 0.0;
    for (const auto& r : records) total += record_cost(r);
    return total;
}

MetricsReport compute_metrics(const std::vector<ReplacementRecord>& records) {
    MetricsReport rep;
    rep.total_engines = static_cast<long long>(records.size());

    std::vector<double> scheduled_ruls;
    long long total_inspections = 0;
    long long total_gap_cycles = 0;
    for (const auto& r : records) {
        total_inspections += r.inspections;
        total_gap_cycles += r.cycles_run - MaintenanceEnv::kFirstDecisionCycle;
        if (r.unscheduled) {
            ++rep.ur;
            continue;
        }
        scheduled_ruls.push_back(static_cast<double>(r.rul_at_stop));
        if (r.rul_at_stop > 30)
            ++rep.wre;
        else
            ++rep.sre;
        if (r.rul_at_stop <= 5)
            ++rep.bucket_le5;
        else if (r.rul_at_stop <= 10)
            ++rep.bucket_le10;
        else if (r.rul_at_stop <= 20)
            ++rep.bucket_le20;
        else
            ++rep.bucket_gt20;
    }

    if (scheduled_ruls.empty()) {
        rep.mean_rul = rep.std_rul = rep.max_rul = rep.min_rul = rep.median_rul = kNan;
    } else {
        std::sort(scheduled_ruls.begin(), scheduled_ruls.end());
        const double n = static_cast<double>(scheduled_ruls.size());
        double sum = 0.0;
        for (double v : scheduled_ruls) sum += v;
        rep.mean_rul = sum / n;
        double sq = 0.0;
        for (double v : scheduled_ruls) sq += (v - rep.mean_rul) * (v - rep.mean_rul);
        rep.std_rul = std::sqrt(sq / n);
        rep.min_rul = scheduled_ruls.front();
        rep.max_rul = scheduled_ruls.back();
        const size_t mid = scheduled_ruls.size() / 2;
        rep.median_rul = scheduled_ruls.size() % 2 == 1
                             ? scheduled_ruls[mid]
                             : 0.5 * (scheduled_ruls[mid - 1] + scheduled_ruls[mid]);
    }

    rep.mean_inspection_period =
        total_inspections > 0
            ? static_cast<double>(total_gap_cycles) / static_cast<double>(total_inspections)
            : kNan;
    rep.total_cost = records.empty() ? 0.0 : compute_cost(records);
    rep.cost_fraction = records.empty()
                            ? 0.0
                            : rep.total_cost / (20.0 * static_cast<double>(records.size()));
    return rep;
}

MetricsReport baseline(const std::string& kind, int n) {
    if (n < 0) throw ConfigError("baseline: negative n");
    std::vector<ReplacementRecord> records;
    records.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        ReplacementRecord r;
        r.engine_id = i + 1;
        if (kind == "ideal") {
            r.rul_at_stop = 1;  // replaced exactly before failure
            r.unscheduled = false;
        } else if (kind == "corrective") {
            r.rul_at_stop = 0;  // run to failure
            r.unscheduled = true;
        } else {
            throw ConfigError("baseline: kind must be 'ideal' or 'corrective'");
        }
        r.inspections = 0;
        r.cycles_run = MaintenanceEnv::kFirstDecisionCycle;
        records.push_back(r);
    }
    MetricsReport rep = compute_metrics(records);
    rep.notes = "baseline:" + kind;
    return rep;
}

SweepResult threshold_policy_sweep(const std::vector<PredictionSeries>& series, int min_threshold,
                                   int max_threshold) {
    if (min_threshold > max_threshold) throw ConfigError("sweep: min > max");
    SweepResult result;
    for (int theta = min_threshold; theta <= max_threshold; ++theta) {
        SweepRow row;
        row.threshold = theta;
        double rul_sum_all = 0.0;
        double rul_sum_scheduled = 0.0;
        long long scheduled = 0;
        for (const auto& s : series) {
            if (s.q50.size() != s.true_rul.size() || s.q50.empty())
                throw ContractViolation("sweep: malformed prediction series");
            bool triggered = false;
            for (size_t i = 0; i < s.q50.size(); ++i) {
                if (s.q50[i] <= static_cast<double>(theta)) {
                    const long long rul = std::llround(s.true_rul[i]);
                    if (rul <= 0) break;  // prediction only reached the threshold at failure
                    triggered = true;
                    ++scheduled;
                    rul_sum_all += static_cast<double>(rul);
                    rul_sum_scheduled += static_cast<double>(rul);
                    if (rul <= 5)
                        ++row.bucket_le5;
                    else if (rul <= 10)
                        ++row.bucket_le10;
                    else if (rul <= 20)
                        ++row.bucket_le20;
                    else
                        ++row.bucket_gt20;
                    break;
                }
            }
            if (!triggered) ++row.ur;  // unscheduled engines count as RUL 0 in avg_rul
        }
        const long long total = static_cast<long long>(series.size());
        row.avg_rul = total > 0 ? rul_sum_all / static_cast<double>(total) : kNan;
        row.avg_rul_scheduled =
            scheduled > 0 ? rul_sum_scheduled / static_cast<double>(scheduled) : kNan;
        if (row.ur == 0 && result.smallest_ur_free_threshold < 0)
            result.smallest_ur_free_threshold = theta;
        result.rows.push_back(row);
    }
    return result;
}

namespace {

nlohmann::ordered_json json_number(double v) {
    // NaN serializes as null; keep that stable for undefined statistics.
    if (std::isnan(v)) return nullptr;
    return v;
}

double number_or_nan(const nlohmann::json& j) { return j.is_null() ? kNan : j.get<double>(); }

}  // namespace

std::string metrics_to_json(const MetricsReport& r) {
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["kind"] = "metrics_report";
    j["seed"] = r.seed;
    if (r.reward_config_json.empty())
        j["reward_config"] = nullptr;
    else
        j["reward_config"] = nlohmann::ordered_json::parse(r.reward_config_json);
    j["counts"] = {{"total", r.total_engines}, {"sre", r.sre}, {"ur", r.ur}, {"wre", r.wre}};
    j["rul"] = {{"mean", json_number(r.mean_rul)},
                {"std", json_number(r.std_rul)},
                {"max", json_number(r.max_rul)},
                {"min", json_number(r.min_rul)},
                {"median", json_number(r.median_rul)}};
    j["buckets"] = {{"le5", r.bucket_le5},
                    {"le10", r.bucket_le10},
                    {"le20", r.bucket_le20},
                    {"gt20", r.bucket_gt20}};
    j["mean_inspection_period"] = json_number(r.mean_inspection_period);
    j["total_cost"] = r.total_cost;
    j["cost_fraction_of_corrective"] = r.cost_fraction;
    j["notes"] = r.notes;
    return j.dump(2) + "\n";
}

MetricsReport metrics_from_json(const std::string& json) {
    auto j = nlohmann::ordered_json::parse(json);
    if (j.value("kind", "") != "metrics_report") throw IoError("not a metrics_report json");
    MetricsReport r;
    r.seed = j.value("seed", 0ULL);
    if (!j["reward_config"].is_null()) r.reward_config_json = j["reward_config"].dump();
    r.total_engines = j["counts"]["total"].get<long long>();
    r.sre = j["counts"]["sre"].get<long long>();
    r.ur = j["counts"]["ur"].get<long long>();
    r.wre = j["counts"]["wre"].get<long long>();
    r.mean_rul = number_or_nan(j["rul"]["mean"]);
    r.std_rul = number_or_nan(j["rul"]["std"]);
    r.max_rul = number_or_nan(j["rul"]["max"]);
    r.min_rul = number_or_nan(j["rul"]["min"]);
    r.median_rul = number_or_nan(j["rul"]["median"]);
    r.bucket_le5 = j["buckets"]["le5"].get<long long>();
    r.bucket_le10 = j["buckets"]["le10"].get<long long>();
    r.bucket_le20 = j["buckets"]["le20"].get<long long>();
    r.bucket_gt20 = j["buckets"]["gt20"].get<long long>();
    r.mean_inspection_period = number_or_nan(j["mean_inspection_period"]);
    r.total_cost = j["total_cost"].get<double>();
    r.cost_fraction = j["cost_fraction_of_corrective"].get<double>();
    r.notes = j.value("notes", "");
    return r;
}

std::string metrics_csv_header() {
    return "seed,total,sre,ur,wre,mr,sr,mar,mir,mdr,le5,le10,le20,gt20,"
           "mean_inspection_period,total_cost,cost_fraction,notes";
}

std::string metrics_to_csv_row(const MetricsReport& r) {
    std::ostringstream out;
    csv::Writer w(out);
    w.field(static_cast<long long>(r.seed))
        .field(r.total_engines)
        .field(r.sre)
        .field(r.ur)
        .field(r.wre)
        .field(r.mean_rul)
        .field(r.std_rul)
        .field(r.max_rul)
        .field(r.min_rul)
        .field(r.median_rul)
        .field(r.bucket_le5)
        .field(r.bucket_le10)
        .field(r.bucket_le20)
        .field(r.bucket_gt20)
        .field(r.mean_inspection_period)
        .field(r.total_cost)
        .field(r.cost_fraction)
        .field(r.notes);
    w.end_row();
    std::string s = out.str();
    if (!s.empty() && s.back() == '\n') s.pop_back();
    return s;
}

std::string runlog_to_csv(const RunResult& run) {
    std::ostringstream out;
    csv::Writer w(out);
    w.header({"engine_id", "cycle", "rho", "a_r", "a_p", "r_r", "r_p", "R", "replaced",
              "unscheduled", "new_engine"});
    for (const auto& row : run.log) {
        w.field(row.engine_id)
            .field(row.cycle)
            .field(row.rho)
            .field(row.action_replace)
            .field(row.action_gap)
            .field(row.r_replace)
            .field(row.r_inspect)
            .field(row.combined)
            .field(static_cast<long long>(row.replaced))
            .field(static_cast<long long>(row.unscheduled))
            .field(static_cast<long long>(row.new_engine));
        w.end_row();
    }
    return out.str();
}

std::string curves_to_csv(const TrainCurves& curves) {
    std::ostringstream out;
    csv::Writer w(out);
    w.header({"iteration", "combined_reward", "replace_reward", "inspect_reward"});
    for (size_t i = 0; i < curves.combined_reward.size(); ++i) {
        w.field(static_cast<long long>(i))
            .field(curves.combined_reward[i])
            .field(curves.replace_reward[i])
            .field(curves.inspect_reward[i]);
        w.end_row();
    }
    return out.str();
}

std::string sweep_to_csv(const SweepResult& sweep) {
    std::ostringstream out;
    csv::Writer w(out);
    w.header({"threshold", "ur", "le5", "le10", "le20", "gt20", "avg_rul", "avg_rul_scheduled",
              "ur_free"});
    for (const auto& row : sweep.rows) {
        w.field(row.threshold)
            .field(row.ur)
            .field(row.bucket_le5)
            .field(row.bucket_le10)
            .field(row.bucket_le20)
            .field(row.bucket_gt20)
            .field(row.avg_rul)
            .field(row.avg_rul_scheduled)
            .field(static_cast<long long>(row.threshold == sweep.smallest_ur_free_threshold));
        w.end_row();
    }
    return out.str();
}

}  // namespace pdm
