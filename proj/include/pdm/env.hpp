#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "pdm/csv.hpp"
#include "pdm/dist_fit.hpp"
#include "pdm/rng.hpp"

namespace pdm {

// Thresholds and constants of the two reward rules. T1/T2 bound the target
// replacement band (t2, t1]; c0..c4 price the outcomes; beta1/beta2 weight the
// combined reward.
struct RewardConfig {
    double t1 = 20.0, t2 = 5.0;
    double c0 = 5.0;    // fixed replacement cost
    double c1 = 0.1;    // early replacement gain per cycle
    double c2 = 1.0;    // in-band replacement gain per cycle
    double c3 = 2.0;    // near-failure replacement penalty per cycle
    double c4 = 500.0;  // unscheduled replacement punishment
    double beta1 = 1.0, beta2 = 1.0;

    void validate() const;  // throws ConfigError
    std::string to_json() const;
    static RewardConfig from_json(const std::string& json);
};

// Agent-1 reward at a decision point with hidden RUL `rho` and cycle count t.
// action=1: replacement priced by which side of t1/t2 rho falls on;
// action=0: -c4 once rho <= 0, otherwise 0.
double reward_replace(double rho, double cycle, int action, const RewardConfig& cfg);

// Agent-2 reward for choosing `gap`, judged by the RUL at the next inspection.
double reward_inspect(double rho_next, int gap, const RewardConfig& cfg);

// One finished engine.
struct ReplacementRecord {
    int engine_id = 0;
    int rul_at_stop = 0;  // 0 for unscheduled replacements
    bool unscheduled = false;
    int inspections = 0;  // gaps chosen by agent 2 for this engine
    int cycles_run = 0;   // cycle of the final decision point
};

// Source of observation states and hidden lifespans.
class StateProvider {
public:
    virtual ~StateProvider() = default;
    virtual int engine_count() const = 0;
    virtual int lifespan(int engine) const = 0;
    virtual ObservationState state_at(int engine, int cycle) const = 0;
};

// Oracle mode: the true RUL is known and the per-cycle distribution is
// N(rho, sigma_noise); sigma 0 (floored) is a perfect predictor.
class OracleStateProvider : public StateProvider {
public:
    OracleStateProvider(std::vector<int> lifespans, double sigma_noise);
    static std::vector<int> sample_lifespans(int n, int lo, int hi, uint64_t seed);

    int engine_count() const override { return static_cast<int>(lifespans_.size()); }
    int lifespan(int engine) const override { return lifespans_.at(static_cast<size_t>(engine)); }
    ObservationState state_at(int engine, int cycle) const override;

private:
    std::vector<int> lifespans_;
    double sigma_;
};

// Real mode: per-cycle cumulative-probability rows from a states CSV
// (engine_id, cycle, true_rul, p1..p10). Cycles past the last cached row
// serve the last computable state.
class CsvStateProvider : public StateProvider {
public:
    explicit CsvStateProvider(const csv::Table& states);

    int engine_count() const override { return static_cast<int>(engines_.size()); }
    int lifespan(int engine) const override;
    ObservationState state_at(int engine, int cycle) const override;
    int engine_id(int engine) const { return engines_.at(static_cast<size_t>(engine)).id; }

private:
    struct Engine {
        int id = 0;
        int first_cycle = 0;
        int lifespan = 0;
        std::vector<Eigen::VectorXd> blocks;  // per cycle, kStateDepth values
    };
    std::vector<Engine> engines_;
};

struct StepOutcome {
    ObservationState next_state;
    double r_replace = 0.0;   // agent-1 component
    double r_inspect = 0.0;   // agent-2 component
    double combined = 0.0;    // beta1 * r_replace + beta2 * r_inspect
    bool replaced = false;
    bool unscheduled = false;
    bool continued = false;
    bool new_engine = false;
    bool agent2_inert = false;  // no next inspection exists for this step
    bool terminal = false;      // engine boundary for advantage estimation
    double rho_at_decision = 0.0;
    int gap = 0;  // inspection gap chosen (0 on replacement/UR steps)
    int cycle = 0;
    int engine_id = 0;
    ReplacementRecord record;  // valid when terminal
};

// The maintenance decision process. Hidden RUL bookkeeping is exact integer
// arithmetic: rho = lifespan - cycle at every served decision point.
class MaintenanceEnv {
public:
    static constexpr int kFirstDecisionCycle = 60;
    static constexpr int kMaxInspectionGap = 50;  // d_action

    enum class Mode { training, evaluation };

    MaintenanceEnv(std::shared_ptr<const StateProvider> provider, RewardConfig reward,
                   Mode mode, uint64_t seed);

    // Starts over: first engine (shuffled in training mode, pool order in
    // evaluation mode), cycle 60. Deterministic for a given seed.
    ObservationState reset();

    StepOutcome step(int replace_action, int inspection_gap);

    const ObservationState& observation() const { return observation_; }
    int current_engine_id() const;
    int current_cycle() const { return cycle_; }
    double current_rul() const;  // hidden state, exposed for tests and oracles
    long long engines_consumed() const { return engines_consumed_; }
    const RewardConfig& reward_config() const { return reward_; }

private:
    void advance_engine();
    void serve_state();

    std::shared_ptr<const StateProvider> provider_;
    RewardConfig reward_;
    Mode mode_;
    uint64_t seed_;
    Rng rng_;
    std::vector<int> pool_;  // provider engine indices with lifespan >= 60
    size_t pool_pos_ = 0;
    int engine_ = -1;
    int cycle_ = 0;
    int inspections_ = 0;
    long long engines_consumed_ = 0;
    bool started_ = false;
    ObservationState observation_;
};

}  // namespace pdm
