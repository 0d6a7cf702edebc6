#include "pdm/env.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include <json.hpp>

#include "pdm/errors.hpp"

namespace pdm {

void RewardConfig::validate() const {
    if (!(t1 > t2) || !(t2 >= 1.0)) throw ConfigError("reward: need t1 > t2 >= 1");
    if (!(c1 > 0.0) || !(c2 > c1)) throw ConfigError("reward: need c2 > c1 > 0");
    if (!(c3 > c2)) throw ConfigError("reward: need c3 > c2");
    if (!(c4 >= 10.0 * c3)) throw ConfigError("reward: need c4 >= 10*c3");
    if (c0 < 0.0) throw ConfigError("reward: c0 must be non-negative");
}

std::string RewardConfig::to_json() const {
    nlohmann::ordered_json j;
    j["t1"] = t1;
    j["t2"] = t2;
    j["c0"] = c0;
    j["c1"] = c1;
    j["c2"] = c2;
    j["c3"] = c3;
    j["c4"] = c4;
    j["beta1"] = beta1;
    j["beta2"] = beta2;
    return j.dump();
}

RewardConfig RewardConfig::from_json(const std::string& json) {
    RewardConfig c;
    auto j = nlohmann::json::parse(json);
    c.t1 = j.value("t1", c.t1);
    c.t2 = j.value("t2", c.t2);
    c.c0 = j.value("c0", c.c0);
    c.c1 = j.value("c1", c.c1);
    c.c2 = j.value("c2", c.c2);
    c.c3 = j.value("c3", c.c3);
    c.c4 = j.value("c4", c.c4);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    return c;
}

double reward_replace(double rho, double cycle, int action, const RewardConfig& cfg) {
    if (action != 0 && action != 1) throw ContractViolation("reward_replace: action must be 0 or 1");
    if (action == 1) {
        if (rho > cfg.t1) return cfg.c1 * cycle - cfg.c0;
        if (rho > cfg.t2) return cfg.c2 * cycle - cfg.c0;
        return -cfg.c3 * cycle - cfg.c0;
    }
    return rho <= 0.0 ? -cfg.c4 : 0.0;
}

double reward_inspect(double rho_next, int gap, const RewardConfig& cfg) {
    if (rho_next > cfg.t1) return cfg.c1 * gap;
    if (rho_next > cfg.t2) return cfg.c2 * gap;
    return -cfg.c3 * gap;
}

OracleStateProvider::OracleStateProvider(std::vector<int> lifespans, double sigma_noise)
    : lifespans_(std::move(lifespans)), sigma_(std::max(sigma_noise, kScaleFloor)) {
    if (lifespans_.empty()) throw ConfigError("oracle provider: empty lifespan list");
}

std::vector<int> OracleStateProvider::sample_lifespans(int n, int lo, int hi, uint64_t seed) {
    if (n <= 0 || lo > hi) throw ConfigError("sample_lifespans: bad parameters");
    Rng rng(seed);
    std::vector<int> out(static_cast<size_t>(n));
    for (auto& v : out)
        v = lo + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(hi - lo + 1)));
    return out;
}

ObservationState OracleStateProvider::state_at(int engine, int cycle) const {
    const int life = lifespan(engine);
    std::vector<RulDistribution> recent;
    recent.reserve(kStateHistory);
    for (int j = kStateHistory - 1; j >= 0; --j) {
        RulDistribution d;
        d.family = DistFamily::normal;
        d.location = static_cast<double>(life - (cycle - j));
        d.scale = sigma_;
        recent.push_back(d);
    }
    return build_state(recent);
}

CsvStateProvider::CsvStateProvider(const csv::Table& states) {
    const int id_col = states.column("engine_id");
    const int cycle_col = states.column("cycle");
    const int rul_col = states.column("true_rul");
    std::vector<int> p_cols(kStateDepth);
    for (int k = 1; k <= kStateDepth; ++k)
        p_cols[static_cast<size_t>(k - 1)] = states.column("p" + std::to_string(k));

    std::map<int, std::map<int, std::pair<double, Eigen::VectorXd>>> grouped;
    for (const auto& row : states.rows) {
        const int id = static_cast<int>(row.integer(static_cast<size_t>(id_col)));
        const int cycle = static_cast<int>(row.integer(static_cast<size_t>(cycle_col)));
        const double rul = row.num(static_cast<size_t>(rul_col));
        Eigen::VectorXd block(kStateDepth);
        for (int k = 0; k < kStateDepth; ++k) block(k) = row.num(static_cast<size_t>(p_cols[static_cast<size_t>(k)]));
        grouped[id][cycle] = {rul, std::move(block)};
    }
    for (auto& [id, cycles] : grouped) {
        Engine e;
        e.id = id;
        e.first_cycle = cycles.begin()->first;
        int expected = e.first_cycle;
        int life = -1;
        for (auto& [cycle, entry] : cycles) {
            if (cycle != expected)
                throw IntegrityError("states: engine " + std::to_string(id) +
                                     " has non-contiguous cycle " + std::to_string(cycle));
            ++expected;
            const int implied = cycle + static_cast<int>(std::llround(entry.first));
            if (life < 0)
                life = implied;
            else if (life != implied)
                throw IntegrityError("states: engine " + std::to_string(id) +
                                     " has inconsistent true_rul at cycle " + std::to_string(cycle));
            e.blocks.push_back(std::move(entry.second));
        }
        e.lifespan = life;
        engines_.push_back(std::move(e));
    }
    if (engines_.empty()) throw IntegrityError("states: no rows");
}

int CsvStateProvider::lifespan(int engine) const {
    return engines_.at(static_cast<size_t>(engine)).lifespan;
}

ObservationState CsvStateProvider::state_at(int engine, int cycle) const {
    const Engine& e = engines_.at(static_cast<size_t>(engine));
    const int last = e.first_cycle + static_cast<int>(e.blocks.size()) - 1;
    ObservationState state;
    for (int slot = 0; slot < kStateHistory; ++slot) {
        int c = cycle - (kStateHistory - 1 - slot);
        c = std::clamp(c, e.first_cycle, last);  // left-pad early life, clamp overshoot
        const Eigen::VectorXd& block = e.blocks[static_cast<size_t>(c - e.first_cycle)];
        state.segment(slot * kStateDepth, kStateDepth) = block;
    }
    return state;
}

MaintenanceEnv::MaintenanceEnv(std::shared_ptr<const StateProvider> provider, RewardConfig reward,
                               Mode mode, uint64_t seed)
    : provider_(std::move(provider)), reward_(reward), mode_(mode), seed_(seed), rng_(seed) {
    reward_.validate();
    if (!provider_ || provider_->engine_count() == 0) throw ConfigError("env: empty engine pool");
    for (int i = 0; i < provider_->engine_count(); ++i) {
        if (provider_->lifespan(i) < kFirstDecisionCycle) {
            std::cerr << "warning: engine index " << i << " lifespan " << provider_->lifespan(i)
                      << " < " << kFirstDecisionCycle << ", skipped\n";
            continue;
        }
        pool_.push_back(i);
    }
    if (pool_.empty()) throw ConfigError("env: no engine reaches the first decision cycle");
}

ObservationState MaintenanceEnv::reset() {
    rng_ = Rng(seed_);
    // Rebuild the eligible pool in provider order, then shuffle for training.
    pool_.clear();
    for (int i = 0; i < provider_->engine_count(); ++i)
        if (provider_->lifespan(i) >= kFirstDecisionCycle) pool_.push_back(i);
    if (mode_ == Mode::training) rng_.shuffle(pool_);
    pool_pos_ = 0;
    engine_ = pool_[0];
    cycle_ = kFirstDecisionCycle;
    inspections_ = 0;
    engines_consumed_ = 0;
    started_ = true;
    serve_state();
    return observation_;
}

void MaintenanceEnv::serve_state() { observation_ = provider_->state_at(engine_, cycle_); }

int MaintenanceEnv::current_engine_id() const {
    if (auto* csvp = dynamic_cast<const CsvStateProvider*>(provider_.get()))
        return csvp->engine_id(engine_);
    return engine_;
}

double MaintenanceEnv::current_rul() const {
    return static_cast<double>(provider_->lifespan(engine_) - cycle_);
}

void MaintenanceEnv::advance_engine() {
    ++engines_consumed_;
    ++pool_pos_;
    if (pool_pos_ >= pool_.size()) {
        pool_pos_ = 0;
        if (mode_ == Mode::training) rng_.shuffle(pool_);
    }
    engine_ = pool_[pool_pos_];
    cycle_ = kFirstDecisionCycle;
    inspections_ = 0;
}

StepOutcome MaintenanceEnv::step(int replace_action, int inspection_gap) {
    if (!started_) throw ContractViolation("env: step before reset");
    if (replace_action != 0 && replace_action != 1)
        throw ContractViolation("env: replacement action must be 0 or 1");
    if (inspection_gap < 1 || inspection_gap > kMaxInspectionGap)
        throw ContractViolation("env: inspection gap outside 1..50");

    StepOutcome out;
    const double rho = current_rul();
    out.rho_at_decision = rho;
    out.cycle = cycle_;
    out.engine_id = current_engine_id();

    if (rho <= 0.0) {
        // The engine failed before this inspection; the unscheduled-replacement
        // accounting is forced here no matter what the agents chose.
        out.unscheduled = true;
        out.agent2_inert = true;
        out.terminal = true;
        out.new_engine = true;
        out.r_replace = -reward_.c4;
        out.r_inspect = 0.0;
        out.record = {out.engine_id, 0, true, inspections_, cycle_};
        advance_engine();
    } else if (replace_action == 1) {
        out.replaced = true;
        out.agent2_inert = true;
        out.terminal = true;
        out.new_engine = true;
        out.r_replace = reward_replace(rho, cycle_, 1, reward_);
        out.r_inspect = 0.0;
        out.record = {out.engine_id, static_cast<int>(rho), false, inspections_, cycle_};
        advance_engine();
    } else {
        const double rho_next = rho - inspection_gap;
        out.continued = true;
        out.gap = inspection_gap;
        out.r_replace = 0.0;
        out.r_inspect = reward_inspect(rho_next, inspection_gap, reward_);
        ++inspections_;
        cycle_ += inspection_gap;
    }

    out.combined = reward_.beta1 * out.r_replace + reward_.beta2 * out.r_inspect;
    serve_state();
    out.next_state = observation_;
    return out;
}

}  // namespace pdm
