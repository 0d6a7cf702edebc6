// pdm: end-to-end predictive-maintenance pipeline CLI.
//
// Subcommands: train-grp, eval-grp, fit-dist, train-policy, eval-policy,
// sweep-threshold, baseline, report. All commands are deterministic given
// identical inputs and seeds.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "pdm/checkpoint.hpp"
#include "pdm/cmapss.hpp"
#include "pdm/csv.hpp"
#include "pdm/dist_fit.hpp"
#include "pdm/env.hpp"
#include "pdm/errors.hpp"
#include "pdm/eval.hpp"
#include "pdm/grp.hpp"
#include "pdm/ppo.hpp"

namespace {

using namespace pdm;

std::string train_file_path(const std::string& data_dir, const std::string& subset) {
    return data_dir + "/train_" + subset + ".txt";
}

struct GrpData {
    std::vector<WindowSample> train_windows;
    std::vector<std::vector<WindowSample>> test_engine_windows;  // per engine, cycle order
};

// C-MAPSS flow: parse the training file, 50% engine split, normalization
// fitted on the training half only.
GrpData load_cmapss(const std::string& data_dir, const std::string& subset) {
    GrpData data;
    auto traces = parse_cmapss_file(train_file_path(data_dir, subset), subset);
    auto split = split_engines(std::move(traces));
    NormalizationStats stats = fit_normalization(split.train_engines);
    for (const auto& t : split.train_engines) {
        auto windows = make_windows(apply_normalization(t, stats));
        data.train_windows.insert(data.train_windows.end(), windows.begin(), windows.end());
    }
    for (const auto& t : split.test_engines)
        data.test_engine_windows.push_back(make_windows(apply_normalization(t, stats)));
    return data;
}

std::vector<std::vector<WindowSample>> group_by_engine(std::vector<WindowSample> samples) {
    std::map<int, std::vector<WindowSample>> grouped;
    for (auto& s : samples) grouped[s.engine_id].push_back(std::move(s));
    std::vector<std::vector<WindowSample>> out;
    for (auto& [id, windows] : grouped) {
        std::sort(windows.begin(), windows.end(),
                  [](const WindowSample& a, const WindowSample& b) { return a.end_cycle < b.end_cycle; });
        out.push_back(std::move(windows));
    }
    return out;
}

int cmd_train_grp(const std::string& data_dir, const std::string& subset, const std::string& cache,
                  const std::string& config_path, uint64_t seed, const std::string& out,
                  const std::string& history_out, const std::string& write_cache) {
    GrpTrainConfig config;
    if (!config_path.empty()) config = GrpTrainConfig::from_json(csv::read_file(config_path));
    config.seed = seed;
    config.validate();

    std::vector<WindowSample> train_windows;
    if (!cache.empty()) {
        std::ifstream in(cache);
        if (!in) throw IoError("cannot open " + cache);
        train_windows = read_window_cache(in);
    } else {
        train_windows = load_cmapss(data_dir, subset).train_windows;
    }
    std::cout << "training on " << train_windows.size() << " windows\n";

    if (!write_cache.empty()) {
        std::ostringstream ss;
        write_window_cache(ss, train_windows);
        csv::write_file(write_cache, ss.str());
    }

    GrpTrainResult result = train_grp(train_windows, config);
    grp_to_checkpoint(result.model, config.to_json()).save(out);
    std::cout << "best epoch " << result.best_epoch << ", validation RMSE "
              << result.validation_rmse_history[static_cast<size_t>(result.best_epoch)] << "\n";

    if (!history_out.empty()) {
        std::ostringstream ss;
        csv::Writer w(ss);
        w.header({"epoch", "train_loss", "validation_rmse"});
        for (size_t i = 0; i < result.train_loss_history.size(); ++i) {
            w.field(static_cast<long long>(i))
                .field(result.train_loss_history[i])
                .field(result.validation_rmse_history[i]);
            w.end_row();
        }
        csv::write_file(history_out, ss.str());
    }
    return 0;
}

int cmd_eval_grp(const std::string& model_path, const std::string& data_dir,
                 const std::string& subset, const std::string& cache, int last_k,
                 const std::string& out) {
    GrpModel model = grp_from_checkpoint(Checkpoint::load(model_path));

    std::vector<std::vector<WindowSample>> engines;
    if (!cache.empty()) {
        std::ifstream in(cache);
        if (!in) throw IoError("cannot open " + cache);
        engines = group_by_engine(read_window_cache(in));
    } else {
        engines = load_cmapss(data_dir, subset).test_engine_windows;
    }

    const double rmse = evaluate_rmse_last_k(model, engines, last_k);
    std::cout << "last-" << last_k << " RMSE: " << csv::format_double(rmse) << "\n";

    std::ostringstream ss;
    csv::Writer w(ss);
    w.header({"engine_id", "cycle", "q10", "q30", "q50", "q70", "q90", "true_rul"});
    for (const auto& windows : engines) {
        if (windows.empty()) continue;
        const int last_cycle = windows.back().end_cycle;  // final window ends at failure
        for (const auto& sample : windows) {
            QuantileSet qs = predict_quantiles(model, sample);
            w.field(sample.engine_id)
                .field(sample.end_cycle)
                .field(qs.q10)
                .field(qs.q30)
                .field(qs.q50)
                .field(qs.q70)
                .field(qs.q90)
                .field(static_cast<double>(last_cycle - sample.end_cycle));
            w.end_row();
        }
    }
    csv::write_file(out, ss.str());
    return 0;
}

int cmd_fit_dist(const std::string& quantiles_path, const std::string& family_arg,
                 const std::string& out) {
    csv::Table table = csv::read_table_file(quantiles_path);
    const int id_col = table.column("engine_id");
    const int cycle_col = table.column("cycle");
    const int rul_col = table.column("true_rul");
    const std::array<int, 5> q_cols = {table.column("q10"), table.column("q30"),
                                       table.column("q50"), table.column("q70"),
                                       table.column("q90")};

    std::vector<QuantileSet> sets;
    std::vector<double> ruls;
    for (const auto& row : table.rows) {
        std::array<double, 5> v{};
        for (size_t i = 0; i < 5; ++i) v[i] = row.num(static_cast<size_t>(q_cols[i]));
        sets.push_back(QuantileSet::from_values(
            v, static_cast<int>(row.integer(static_cast<size_t>(id_col))),
            static_cast<int>(row.integer(static_cast<size_t>(cycle_col)))));
        ruls.push_back(row.num(static_cast<size_t>(rul_col)));
    }

    DistFamily family = DistFamily::normal;
    if (family_arg == "compare") {
        double err[3] = {0, 0, 0};
        long long wins[3] = {0, 0, 0};
        for (const auto& qs : sets) {
            FitReport rep = compare_families(qs);
            for (int i = 0; i < 3; ++i) err[i] += rep.entries[static_cast<size_t>(i)].abs_error;
            ++wins[static_cast<int>(rep.best)];
        }
        int best = 0;
        for (int i = 1; i < 3; ++i)
            if (err[i] < err[best]) best = i;
        const std::array<DistFamily, 3> fams = {DistFamily::normal, DistFamily::laplace,
                                                DistFamily::cauchy};
        for (int i = 0; i < 3; ++i)
            std::cout << family_name(fams[static_cast<size_t>(i)]) << ": total abs error "
                      << csv::format_double(err[i]) << ", best on " << wins[i] << " rows\n";
        family = fams[static_cast<size_t>(best)];
        std::cout << "selected family: " << family_name(family) << "\n";
    } else {
        family = family_from_name(family_arg);
    }

    std::ostringstream ss;
    csv::Writer w(ss);
    std::vector<std::string> header = {"engine_id", "cycle", "true_rul"};
    for (int k = 1; k <= kStateDepth; ++k) header.push_back("p" + std::to_string(k));
    w.header(header);
    for (size_t i = 0; i < sets.size(); ++i) {
        RulDistribution dist = fit_distribution(sets[i], family);
        w.field(sets[i].engine_id).field(sets[i].cycle).field(ruls[i]);
        for (int k = 1; k <= kStateDepth; ++k) w.field(cdf(dist, static_cast<double>(k)));
        w.end_row();
    }
    csv::write_file(out, ss.str());
    return 0;
}

struct SyntheticSpec {
    int n_engines = 200;
    int life_min = 150;
    int life_max = 350;
    double sigma_noise = 0.0;
    uint64_t seed = 1;
};

std::shared_ptr<const StateProvider> make_provider(const std::string& states_path, bool synthetic,
                                                   const SyntheticSpec& spec) {
    if (!states_path.empty())
        return std::make_shared<CsvStateProvider>(csv::read_table_file(states_path));
    if (!synthetic) throw ConfigError("need --states or --synthetic");
    auto lifespans = OracleStateProvider::sample_lifespans(spec.n_engines, spec.life_min,
                                                           spec.life_max, spec.seed);
    return std::make_shared<OracleStateProvider>(lifespans, spec.sigma_noise);
}

int cmd_train_policy(const std::string& states_path, bool synthetic, const SyntheticSpec& spec,
                     const std::string& reward_path, const std::string& ppo_path, uint64_t seed,
                     const std::string& out, const std::string& curves_out) {
    RewardConfig reward;
    if (!reward_path.empty()) reward = RewardConfig::from_json(csv::read_file(reward_path));
    reward.validate();
    PpoConfig config;
    if (!ppo_path.empty()) config = PpoConfig::from_json(csv::read_file(ppo_path));
    config.seed = seed;
    config.validate();

    auto provider = make_provider(states_path, synthetic, spec);
    PpoModel model = make_ppo_model(config.seed);

    nlohmann::ordered_json echo;
    echo["ppo"] = nlohmann::ordered_json::parse(config.to_json());
    echo["reward"] = nlohmann::ordered_json::parse(reward.to_json());

    TrainCurves curves;
    try {
        curves = train_ppo(provider, reward, model, config);
    } catch (const ModelStateError& e) {
        // Divergence: the trainer restored the last good parameters.
        std::cerr << "error: " << e.what() << "\n";
        ppo_to_checkpoint(model, echo.dump()).save(out);
        return 1;
    }
    ppo_to_checkpoint(model, echo.dump()).save(out);
    if (!curves_out.empty()) csv::write_file(curves_out, curves_to_csv(curves));
    std::cout << "trained " << config.episodes << " iterations; final combined reward "
              << csv::format_double(curves.combined_reward.back()) << "\n";
    return 0;
}

int cmd_eval_policy(const std::string& policy_path, const std::string& states_path, bool synthetic,
                    const SyntheticSpec& spec, const std::string& reward_path, int n_engines,
                    uint64_t seed, const std::string& report_out, const std::string& runlog_out) {
    PpoModel model = ppo_from_checkpoint(Checkpoint::load(policy_path));
    RewardConfig reward;
    if (!reward_path.empty()) reward = RewardConfig::from_json(csv::read_file(reward_path));
    auto provider = make_provider(states_path, synthetic, spec);
    MaintenanceEnv env(provider, reward, MaintenanceEnv::Mode::evaluation, seed);
    RunResult run = run_policy(env, model, n_engines);
    MetricsReport report = compute_metrics(run.records);
    report.seed = seed;
    report.reward_config_json = reward.to_json();
    csv::write_file(report_out, metrics_to_json(report));
    if (!runlog_out.empty()) csv::write_file(runlog_out, runlog_to_csv(run));
    std::cout << "engines " << report.total_engines << ", UR " << report.ur << ", MR "
              << csv::format_double(report.mean_rul) << ", mean inspection period "
              << csv::format_double(report.mean_inspection_period) << ", cost "
              << csv::format_double(report.total_cost) << "\n";
    return 0;
}

int cmd_sweep(const std::string& quantiles_path, bool synthetic_oracle, const SyntheticSpec& spec,
              int min_threshold, int max_threshold, const std::string& out) {
    std::vector<PredictionSeries> series;
    if (!quantiles_path.empty()) {
        csv::Table table = csv::read_table_file(quantiles_path);
        const int id_col = table.column("engine_id");
        const int cycle_col = table.column("cycle");
        const int q50_col = table.column("q50");
        const int rul_col = table.column("true_rul");
        std::map<int, std::map<int, std::pair<double, double>>> grouped;
        for (const auto& row : table.rows)
            grouped[static_cast<int>(row.integer(static_cast<size_t>(id_col)))]
                   [static_cast<int>(row.integer(static_cast<size_t>(cycle_col)))] = {
                row.num(static_cast<size_t>(q50_col)), row.num(static_cast<size_t>(rul_col))};
        for (auto& [id, cycles] : grouped) {
            PredictionSeries s;
            s.engine_id = id;
            s.first_cycle = cycles.begin()->first;
            for (auto& [cycle, entry] : cycles) {
                s.q50.push_back(entry.first);
                s.true_rul.push_back(entry.second);
            }
            series.push_back(std::move(s));
        }
    } else if (synthetic_oracle) {
        auto lifespans = OracleStateProvider::sample_lifespans(spec.n_engines, spec.life_min,
                                                               spec.life_max, spec.seed);
        for (size_t i = 0; i < lifespans.size(); ++i) {
            PredictionSeries s;
            s.engine_id = static_cast<int>(i) + 1;
            s.first_cycle = MaintenanceEnv::kFirstDecisionCycle;
            for (int c = s.first_cycle; c <= lifespans[i]; ++c) {
                s.q50.push_back(static_cast<double>(lifespans[i] - c));
                s.true_rul.push_back(static_cast<double>(lifespans[i] - c));
            }
            series.push_back(std::move(s));
        }
    } else {
        throw ConfigError("need --quantiles or --synthetic-oracle");
    }

    SweepResult sweep = threshold_policy_sweep(series, min_threshold, max_threshold);
    csv::write_file(out, sweep_to_csv(sweep));
    if (sweep.smallest_ur_free_threshold >= 0)
        std::cout << "smallest UR-free threshold: " << sweep.smallest_ur_free_threshold << "\n";
    else
        std::cout << "no UR-free threshold in [" << min_threshold << ", " << max_threshold << "]\n";
    return 0;
}

int cmd_baseline(const std::string& kind, int n, const std::string& report_out) {
    MetricsReport report = baseline(kind, n);
    std::cout << kind << " n=" << n << " cost=" << csv::format_double(report.total_cost) << "\n";
    if (!report_out.empty()) csv::write_file(report_out, metrics_to_json(report));
    return 0;
}

int cmd_report_merge(const std::vector<std::string>& inputs, const std::string& out) {
    std::ostringstream ss;
    ss << metrics_csv_header() << "\n";
    for (const auto& path : inputs) {
        MetricsReport r = metrics_from_json(csv::read_file(path));
        ss << metrics_to_csv_row(r) << "\n";
    }
    csv::write_file(out, ss.str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"predictive-maintenance pipeline: probabilistic RUL prediction, distribution "
                 "fitting, and two-agent maintenance policies"};
    app.require_subcommand(1);

    std::string data_dir, subset = "FD001", cache, config_path, out_path = "model.ckpt";
    std::string history_out, write_cache;
    uint64_t seed = 1;
    auto* train_grp_cmd = app.add_subcommand("train-grp", "train the RUL quantile model");
    train_grp_cmd->add_option("--data-dir", data_dir, "directory with C-MAPSS train_FDxxx.txt");
    train_grp_cmd->add_option("--subset", subset, "FD001..FD004");
    train_grp_cmd->add_option("--cache", cache, "window cache CSV instead of raw data");
    train_grp_cmd->add_option("--config", config_path, "GRP training config JSON");
    train_grp_cmd->add_option("--seed", seed, "training seed");
    train_grp_cmd->add_option("--out", out_path, "checkpoint output path");
    train_grp_cmd->add_option("--history", history_out, "per-epoch loss/RMSE CSV");
    train_grp_cmd->add_option("--write-cache", write_cache, "write the training window cache CSV");

    std::string model_path;
    int last_k = 30;
    std::string eval_out = "per_engine.csv";
    auto* eval_grp_cmd = app.add_subcommand("eval-grp", "evaluate the RUL model, emit quantiles");
    eval_grp_cmd->add_option("--model", model_path, "GRP checkpoint")->required();
    eval_grp_cmd->add_option("--data-dir", data_dir, "directory with C-MAPSS files");
    eval_grp_cmd->add_option("--subset", subset, "FD001..FD004");
    eval_grp_cmd->add_option("--cache", cache, "window cache CSV instead of raw data");
    eval_grp_cmd->add_option("--last-k", last_k, "cycles per engine for the RMSE");
    eval_grp_cmd->add_option("--out", eval_out, "per-engine quantiles CSV");

    std::string quantiles_path, family = "normal", states_out = "states.csv";
    auto* fit_cmd = app.add_subcommand("fit-dist", "fit distributions, emit cumulative states");
    fit_cmd->add_option("--quantiles", quantiles_path, "per-engine quantiles CSV")->required();
    fit_cmd->add_option("--family", family, "normal|laplace|cauchy|compare");
    fit_cmd->add_option("--out", states_out, "states CSV output");

    std::string states_path, reward_path, ppo_path, curves_out, policy_out = "policy.ckpt";
    bool synthetic = false;
    SyntheticSpec spec;
    auto add_synth = [&spec](CLI::App* cmd, bool* flag, const std::string& flag_name) {
        cmd->add_flag(flag_name, *flag, "use the synthetic oracle environment");
        cmd->add_option("--n-engines", spec.n_engines, "synthetic engine count");
        cmd->add_option("--life-min", spec.life_min, "minimum lifespan");
        cmd->add_option("--life-max", spec.life_max, "maximum lifespan");
        cmd->add_option("--sigma-noise", spec.sigma_noise, "predictor scale (0 = perfect)");
        cmd->add_option("--synthetic-seed", spec.seed, "lifespan sampling seed");
    };

    auto* train_policy_cmd = app.add_subcommand("train-policy", "train the two-agent policy");
    train_policy_cmd->add_option("--states", states_path, "states CSV from fit-dist");
    add_synth(train_policy_cmd, &synthetic, "--synthetic");
    train_policy_cmd->add_option("--reward-config", reward_path, "reward config JSON");
    train_policy_cmd->add_option("--ppo-config", ppo_path, "trainer config JSON");
    train_policy_cmd->add_option("--seed", seed, "training seed");
    train_policy_cmd->add_option("--out", policy_out, "policy checkpoint output");
    train_policy_cmd->add_option("--curves", curves_out, "per-iteration reward curves CSV");

    std::string report_out = "report.json", runlog_out, policy_in;
    int n_engines = 50;
    bool synthetic_eval = false;
    auto* eval_policy_cmd = app.add_subcommand("eval-policy", "run a policy, emit metrics");
    eval_policy_cmd->add_option("--policy", policy_in, "policy checkpoint")->required();
    eval_policy_cmd->add_option("--states", states_path, "states CSV from fit-dist");
    add_synth(eval_policy_cmd, &synthetic_eval, "--synthetic");
    eval_policy_cmd->add_option("--reward-config", reward_path, "reward config JSON");
    eval_policy_cmd->add_option("--n", n_engines, "engines to consume");
    eval_policy_cmd->add_option("--seed", seed, "environment seed");
    eval_policy_cmd->add_option("--report", report_out, "metrics JSON output");
    eval_policy_cmd->add_option("--runlog", runlog_out, "per-decision CSV output");

    int min_threshold = 4, max_threshold = 15;
    std::string sweep_out = "sweep.csv";
    bool synthetic_oracle = false;
    auto* sweep_cmd = app.add_subcommand("sweep-threshold", "threshold replacement policy sweep");
    sweep_cmd->add_option("--quantiles", quantiles_path, "per-engine quantiles CSV");
    add_synth(sweep_cmd, &synthetic_oracle, "--synthetic-oracle");
    sweep_cmd->add_option("--min", min_threshold, "lowest threshold");
    sweep_cmd->add_option("--max", max_threshold, "highest threshold");
    sweep_cmd->add_option("--out", sweep_out, "sweep CSV output");

    std::string baseline_kind = "ideal";
    int baseline_n = 130;
    std::string baseline_report;
    auto* baseline_cmd = app.add_subcommand("baseline", "ideal/corrective maintenance baselines");
    baseline_cmd->add_option("--kind", baseline_kind, "ideal|corrective");
    baseline_cmd->add_option("--n", baseline_n, "engine count");
    baseline_cmd->add_option("--report", baseline_report, "metrics JSON output");

    std::vector<std::string> merge_inputs;
    std::string merge_out = "summary.csv";
    auto* report_cmd = app.add_subcommand("report", "merge metric reports into a summary CSV");
    report_cmd->add_option("--merge", merge_inputs, "metrics JSON files")->required();
    report_cmd->add_option("--out", merge_out, "summary CSV output");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_grp_cmd->parsed())
            return cmd_train_grp(data_dir, subset, cache, config_path, seed, out_path, history_out,
                                 write_cache);
        if (eval_grp_cmd->parsed())
            return cmd_eval_grp(model_path, data_dir, subset, cache, last_k, eval_out);
        if (fit_cmd->parsed()) return cmd_fit_dist(quantiles_path, family, states_out);
        if (train_policy_cmd->parsed())
            return cmd_train_policy(states_path, synthetic, spec, reward_path, ppo_path, seed,
                                    policy_out, curves_out);
        if (eval_policy_cmd->parsed())
            return cmd_eval_policy(policy_in, states_path, synthetic_eval, spec, reward_path,
                                   n_engines, seed, report_out, runlog_out);
        if (sweep_cmd->parsed())
            return cmd_sweep(quantiles_path, synthetic_oracle, spec, min_threshold, max_threshold,
                             sweep_out);
        if (baseline_cmd->parsed()) return cmd_baseline(baseline_kind, baseline_n, baseline_report);
        if (report_cmd->parsed()) return cmd_report_merge(merge_inputs, merge_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
