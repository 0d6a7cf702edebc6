#include "pdm/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "pdm/errors.hpp"

namespace pdm {

bool Mlp::is_finite() const {
    for (const auto& m : w)
        if (!m.allFinite()) return false;
    for (const auto& v : b)
        if (!v.allFinite()) return false;
    return true;
}

namespace {

// Orthonormal rows (or columns when the layer widens), signs fixed from the
// QR diagonal so the result is deterministic.
Eigen::MatrixXd orthogonal_matrix(Rng& rng, int rows, int cols) {
    const int big = std::max(rows, cols);
    const int small = std::min(rows, cols);
    Eigen::MatrixXd g(big, small);
    for (int c = 0; c < small; ++c)
        for (int r = 0; r < big; ++r) g(r, c) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
    Eigen::MatrixXd rdiag = qr.matrixQR();
    for (int j = 0; j < small; ++j)
        if (rdiag(j, j) < 0.0) q.col(j) *= -1.0;
    return rows >= cols ? q : Eigen::MatrixXd(q.transpose());
}

}  // namespace

Mlp make_mlp(Rng& rng, const std::vector<int>& sizes, bool zero_final) {
    if (sizes.size() < 2) throw ConfigError("mlp: need at least input and output sizes");
    Mlp net;
    for (size_t i = 0; i + 1 < sizes.size(); ++i) {
        const bool final_layer = i + 2 == sizes.size();
        if (final_layer && zero_final)
            net.w.push_back(Eigen::MatrixXd::Zero(sizes[i + 1], sizes[i]));
        else
            net.w.push_back(orthogonal_matrix(rng, sizes[i + 1], sizes[i]));
        net.b.push_back(Eigen::VectorXd::Zero(sizes[i + 1]));
    }
    return net;
}

Eigen::MatrixXd mlp_forward(const Mlp& net, const Eigen::MatrixXd& input, MlpCache* cache) {
    if (input.rows() != net.w.front().cols())
        throw ContractViolation("mlp: input dimension mismatch");
    if (cache) {
        cache->acts.clear();
        cache->acts.push_back(input);
    }
    Eigen::MatrixXd a = input;
    for (size_t i = 0; i < net.w.size(); ++i) {
        Eigen::MatrixXd pre = (net.w[i] * a).colwise() + net.b[i];
        a = (i + 1 == net.w.size()) ? pre : Eigen::MatrixXd(pre.array().tanh());
        if (cache) cache->acts.push_back(a);
    }
    return a;
}

void mlp_backward(const Mlp& net, const MlpCache& cache, const Eigen::MatrixXd& d_out, Mlp& grads) {
    Eigen::MatrixXd d = d_out;
    for (int i = static_cast<int>(net.w.size()) - 1; i >= 0; --i) {
        const Eigen::MatrixXd& act = cache.acts[static_cast<size_t>(i + 1)];
        Eigen::MatrixXd d_pre =
            (i + 1 == static_cast<int>(net.w.size()))
                ? d
                : Eigen::MatrixXd((d.array() * (1.0 - act.array().square())).matrix());
        grads.w[static_cast<size_t>(i)] += d_pre * cache.acts[static_cast<size_t>(i)].transpose();
        grads.b[static_cast<size_t>(i)] += d_pre.rowwise().sum();
        if (i > 0) d = net.w[static_cast<size_t>(i)].transpose() * d_pre;
    }
}

Mlp zero_like(const Mlp& net) {
    Mlp z;
    for (const auto& m : net.w) z.w.push_back(Eigen::MatrixXd::Zero(m.rows(), m.cols()));
    for (const auto& v : net.b) z.b.push_back(Eigen::VectorXd::Zero(v.size()));
    return z;
}

std::vector<ParamView> param_views(Mlp& net, const std::string& prefix) {
    std::vector<ParamView> views;
    for (size_t i = 0; i < net.w.size(); ++i) {
        views.push_back({prefix + ".w" + std::to_string(i), net.w[i].data(), net.w[i].size()});
        views.push_back({prefix + ".b" + std::to_string(i), net.b[i].data(), net.b[i].size()});
    }
    return views;
}

double entropy(const Eigen::VectorXd& probs) {
    double h = 0.0;
    for (Eigen::Index i = 0; i < probs.size(); ++i)
        if (probs(i) > 0.0) h -= probs(i) * std::log(probs(i));
    return h;
}

double Categorical::entropy() const { return pdm::entropy(probs); }

int Categorical::sample(Rng& rng) const {
    const double u = rng.uniform();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
        acc += probs(i);
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size() - 1);
}

int Categorical::argmax() const {
    int best = 0;
    for (Eigen::Index i = 1; i < probs.size(); ++i)
        if (probs(i) > probs(best)) best = static_cast<int>(i);
    return best;
}

namespace {

// Stable log-softmax of one logits column.
void log_softmax_into(const Eigen::VectorXd& logits, Eigen::VectorXd& log_probs,
                      Eigen::VectorXd& probs) {
    const double m = logits.maxCoeff();
    log_probs = logits.array() - m;
    const double lse = std::log(log_probs.array().exp().sum());
    log_probs.array() -= lse;
    probs = log_probs.array().exp();
}

}  // namespace

Categorical policy_forward(const Mlp& actor, const ObservationState& state) {
    Eigen::MatrixXd logits = mlp_forward(actor, state);
    if (!logits.allFinite()) throw ModelStateError("policy_forward: non-finite logits");
    Categorical dist;
    log_softmax_into(logits.col(0), dist.log_probs, dist.probs);
    return dist;
}

void compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                 const std::vector<uint8_t>& terminals, double bootstrap_value, double gamma,
                 double lambda, bool target_as_printed, std::vector<double>& advantages,
                 std::vector<double>& targets) {
    const size_t T = rewards.size();
    if (values.size() != T || terminals.size() != T)
        throw ContractViolation("compute_gae: mismatched lengths");
    advantages.assign(T, 0.0);
    targets.assign(T, 0.0);
    double next_value = bootstrap_value;
    double next_adv = 0.0;
    for (size_t i = T; i-- > 0;) {
        const double nonterm = terminals[i] ? 0.0 : 1.0;
        const double zeta = rewards[i] + gamma * next_value * nonterm - values[i];
        advantages[i] = zeta + gamma * lambda * next_adv * nonterm;
        targets[i] = advantages[i] + (target_as_printed ? next_value * nonterm : values[i]);
        next_value = values[i];
        next_adv = advantages[i];
    }
}

void PpoConfig::validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("ppo: gamma outside (0,1]");
    if (!(gae_lambda > 0.0 && gae_lambda <= 1.0)) throw ConfigError("ppo: gae_lambda outside (0,1]");
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) throw ConfigError("ppo: clip outside (0,1)");
    if (learning_rate < 0.0) throw ConfigError("ppo: negative learning rate");
    if (horizon <= 0 || chunk_length <= 0 || update_epochs <= 0 || batch_size <= 0 ||
        minibatch_chunks <= 0 || episodes <= 0)
        throw ConfigError("ppo: sizes must be positive");
    if (horizon % chunk_length != 0) throw ConfigError("ppo: horizon must be divisible by chunk length");
    if (grad_clip <= 0.0) throw ConfigError("ppo: grad_clip must be positive");
}

std::string PpoConfig::to_json() const {
    nlohmann::ordered_json j;
    j["gamma"] = gamma;
    j["gae_lambda"] = gae_lambda;
    j["clip_epsilon"] = clip_epsilon;
    j["entropy_coef"] = entropy_coef;
    j["learning_rate"] = learning_rate;
    j["horizon"] = horizon;
    j["chunk_length"] = chunk_length;
    j["update_epochs"] = update_epochs;
    j["batch_size"] = batch_size;
    j["minibatch_chunks"] = minibatch_chunks;
    j["episodes"] = episodes;
    j["grad_clip"] = grad_clip;
    j["seed"] = seed;
    j["value_target_as_printed"] = value_target_as_printed;
    return j.dump();
}

PpoConfig PpoConfig::from_json(const std::string& json) {
    PpoConfig c;
    auto j = nlohmann::json::parse(json);
    c.gamma = j.value("gamma", c.gamma);
    c.gae_lambda = j.value("gae_lambda", c.gae_lambda);
    c.clip_epsilon = j.value("clip_epsilon", c.clip_epsilon);
    c.entropy_coef = j.value("entropy_coef", c.entropy_coef);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.horizon = j.value("horizon", c.horizon);
    c.chunk_length = j.value("chunk_length", c.chunk_length);
    c.update_epochs = j.value("update_epochs", c.update_epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.minibatch_chunks = j.value("minibatch_chunks", c.minibatch_chunks);
    c.episodes = j.value("episodes", c.episodes);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.seed = j.value("seed", c.seed);
    c.value_target_as_printed = j.value("value_target_as_printed", c.value_target_as_printed);
    return c;
}

void ValueNormalizer::update(const std::vector<double>& targets) {
    for (double t : targets) {
        count += 1.0;
        const double delta = t - mean;
        mean += delta / count;
        m2 += delta * (t - mean);
    }
}

double ValueNormalizer::stddev() const {
    const double var = count > 0.0 ? m2 / count : 1.0;
    return std::sqrt(var + 1e-8);
}

bool PpoModel::is_finite() const {
    return actor_replace.is_finite() && actor_inspect.is_finite() && critic_replace.is_finite() &&
           critic_inspect.is_finite();
}

PpoModel make_ppo_model(uint64_t seed) {
    Rng rng(seed);
    PpoModel m;
    m.actor_replace = make_mlp(rng, {kStateDim, 128, 128, 2});
    m.actor_inspect = make_mlp(rng, {kStateDim, 128, 128, MaintenanceEnv::kMaxInspectionGap});
    m.critic_replace = make_mlp(rng, {kStateDim, 256, 64, 1});
    m.critic_inspect = make_mlp(rng, {kStateDim, 256, 64, 1});
    return m;
}

std::pair<int, int> act_greedy(const PpoModel& model, const ObservationState& state) {
    const int a_r = policy_forward(model.actor_replace, state).argmax();
    const int a_p = policy_forward(model.actor_inspect, state).argmax() + 1;
    return {a_r, a_p};
}

namespace {

struct ActorGradResult {
    double objective_sum = 0.0;  // pre 1/(2N) scaling
};

// Per-agent pass: fills d_logits (scaled by 1/(2N)) and accumulates the
// objective sum; masked columns contribute nothing.
ActorGradResult actor_agent_pass(const Eigen::MatrixXd& logits, const std::vector<int>& actions,
                                 const std::vector<double>& old_logp,
                                 const std::vector<double>& adv, const std::vector<uint8_t>* mask,
                                 double clip_epsilon, double entropy_coef, double inv_2n,
                                 Eigen::MatrixXd& d_logits) {
    ActorGradResult res;
    const int N = static_cast<int>(actions.size());
    Eigen::VectorXd lp, p;
    d_logits.setZero(logits.rows(), logits.cols());
    for (int n = 0; n < N; ++n) {
        if (mask && (*mask)[static_cast<size_t>(n)]) continue;
        log_softmax_into(logits.col(n), lp, p);
        const int a = actions[static_cast<size_t>(n)];
        const double chi = std::exp(lp(a) - old_logp[static_cast<size_t>(n)]);
        const double advantage = adv[static_cast<size_t>(n)];
        const double clipped = std::clamp(chi, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
        const double surr = std::min(chi * advantage, clipped * advantage);
        const double h = -(p.array() * lp.array()).sum();
        res.objective_sum += surr + entropy_coef * h;

        const bool clipped_out = (advantage > 0.0 && chi > 1.0 + clip_epsilon) ||
                                 (advantage < 0.0 && chi < 1.0 - clip_epsilon);
        const double coef = clipped_out ? 0.0 : advantage * chi;
        Eigen::VectorXd d_col = -coef * p;
        d_col(a) += coef;
        d_col += entropy_coef * (-(p.array() * (lp.array() + h))).matrix();
        d_logits.col(n) = d_col * inv_2n;
    }
    return res;
}

}  // namespace

double actor_objective_and_grad(const Mlp& actor_r, const Mlp& actor_p, const UpdateBatch& batch,
                                double clip_epsilon, double entropy_coef, bool apply_inert_mask,
                                Mlp& grad_r, Mlp& grad_p) {
    const int N = batch.size();
    if (N == 0) throw ContractViolation("actor loss: empty batch");
    const double inv_2n = 1.0 / (2.0 * static_cast<double>(N));

    MlpCache cache_r, cache_p;
    Eigen::MatrixXd logits_r = mlp_forward(actor_r, batch.states, &cache_r);
    Eigen::MatrixXd logits_p = mlp_forward(actor_p, batch.states, &cache_p);

    Eigen::MatrixXd d_logits;
    auto res_r = actor_agent_pass(logits_r, batch.action_r, batch.old_logp_r, batch.adv_r, nullptr,
                                  clip_epsilon, entropy_coef, inv_2n, d_logits);
    mlp_backward(actor_r, cache_r, d_logits, grad_r);

    auto res_p = actor_agent_pass(logits_p, batch.action_p, batch.old_logp_p, batch.adv_p,
                                  apply_inert_mask ? &batch.inert2 : nullptr, clip_epsilon,
                                  entropy_coef, inv_2n, d_logits);
    mlp_backward(actor_p, cache_p, d_logits, grad_p);

    return (res_r.objective_sum + res_p.objective_sum) * inv_2n;
}

double critic_loss_and_grad(const Mlp& critic_r, const Mlp& critic_p, const UpdateBatch& batch,
                            Mlp& grad_r, Mlp& grad_p) {
    const int N = batch.size();
    if (N == 0) throw ContractViolation("critic loss: empty batch");
    MlpCache cache_r, cache_p;
    Eigen::MatrixXd v_r = mlp_forward(critic_r, batch.states, &cache_r);
    Eigen::MatrixXd v_p = mlp_forward(critic_p, batch.states, &cache_p);

    Eigen::MatrixXd d_r(1, N), d_p(1, N);
    double loss = 0.0;
    for (int n = 0; n < N; ++n) {
        const double er = v_r(0, n) - batch.vtarget_r[static_cast<size_t>(n)];
        const double ep = v_p(0, n) - batch.vtarget_p[static_cast<size_t>(n)];
        loss += er * er + ep * ep;
        d_r(0, n) = er / static_cast<double>(N);
        d_p(0, n) = ep / static_cast<double>(N);
    }
    mlp_backward(critic_r, cache_r, d_r, grad_r);
    mlp_backward(critic_p, cache_p, d_p, grad_p);
    return loss / (2.0 * static_cast<double>(N));
}

namespace {

struct TrajectoryBuffer {
    Eigen::MatrixXd states;  // kStateDim x T
    std::vector<int> action_r, action_p;
    std::vector<double> logp_r, logp_p;
    std::vector<double> value_r, value_p;  // denormalized
    std::vector<double> reward;
    std::vector<uint8_t> inert2, terminal;
    double bootstrap_r = 0.0, bootstrap_p = 0.0;
    std::vector<double> adv_r, adv_p, tgt_r, tgt_p;  // filled after GAE

    void resize(int T) {
        states.resize(kStateDim, T);
        action_r.resize(static_cast<size_t>(T));
        action_p.resize(static_cast<size_t>(T));
        logp_r.resize(static_cast<size_t>(T));
        logp_p.resize(static_cast<size_t>(T));
        value_r.resize(static_cast<size_t>(T));
        value_p.resize(static_cast<size_t>(T));
        reward.resize(static_cast<size_t>(T));
        inert2.resize(static_cast<size_t>(T));
        terminal.resize(static_cast<size_t>(T));
    }
};

double scalar_value(const Mlp& critic, const ObservationState& state) {
    return mlp_forward(critic, state)(0, 0);
}

void normalize_in_place(std::vector<std::vector<double>*> groups) {
    double sum = 0.0, n = 0.0;
    for (auto* g : groups)
        for (double v : *g) {
            sum += v;
            n += 1.0;
        }
    const double mean = sum / n;
    double sq = 0.0;
    for (auto* g : groups)
        for (double v : *g) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / n) + 1e-8;
    for (auto* g : groups)
        for (double& v : *g) v = (v - mean) / sd;
}

}  // namespace

TrainCurves train_ppo(std::shared_ptr<const StateProvider> provider, const RewardConfig& reward,
                      PpoModel& model, const PpoConfig& config) {
    config.validate();
    Rng root(config.seed);
    Rng shuffle_rng = root.fork(1);

    std::vector<MaintenanceEnv> envs;
    std::vector<uint64_t> sampler_seeds;
    for (int n = 0; n < config.batch_size; ++n) {
        envs.emplace_back(provider, reward, MaintenanceEnv::Mode::training,
                          root.fork(100 + static_cast<uint64_t>(n)).next_u64());
        sampler_seeds.push_back(root.fork(200 + static_cast<uint64_t>(n)).next_u64());
    }

    auto views_ar = param_views(model.actor_replace, "actor_r");
    auto views_ap = param_views(model.actor_inspect, "actor_p");
    auto views_cr = param_views(model.critic_replace, "critic_r");
    auto views_cp = param_views(model.critic_inspect, "critic_p");
    Adam adam_ar, adam_ap, adam_cr, adam_cp;

    const int T = config.horizon;
    const int n_chunks = T / config.chunk_length;
    std::vector<TrajectoryBuffer> trajs(static_cast<size_t>(config.batch_size));
    for (auto& tr : trajs) tr.resize(T);

    TrainCurves curves;
    PpoModel last_good = model;

    for (int ep = 0; ep < config.episodes; ++ep) {
        const double decay =
            1.0 - static_cast<double>(ep) / static_cast<double>(config.episodes);
        const double lr = config.learning_rate * decay;
        // The entropy bonus anneals with the learning rate: wide exploration
        // early (the replace-everything policy is a strong local attractor),
        // precise convergence late.
        const double entropy_coef = config.entropy_coef * decay;

        double sum_combined = 0.0, sum_replace = 0.0, sum_inspect = 0.0;
        for (int n = 0; n < config.batch_size; ++n) {
            MaintenanceEnv& env = envs[static_cast<size_t>(n)];
            TrajectoryBuffer& tr = trajs[static_cast<size_t>(n)];
            env.reset();
            Rng sampler(sampler_seeds[static_cast<size_t>(n)]);
            for (int t = 0; t < T; ++t) {
                const ObservationState state = env.observation();
                Categorical dist_r = policy_forward(model.actor_replace, state);
                Categorical dist_p = policy_forward(model.actor_inspect, state);
                const int a_r = dist_r.sample(sampler);
                const int class_p = dist_p.sample(sampler);
                tr.states.col(t) = state;
                tr.action_r[static_cast<size_t>(t)] = a_r;
                tr.action_p[static_cast<size_t>(t)] = class_p;
                tr.logp_r[static_cast<size_t>(t)] = dist_r.log_prob(a_r);
                tr.logp_p[static_cast<size_t>(t)] = dist_p.log_prob(class_p);
                tr.value_r[static_cast<size_t>(t)] =
                    model.norm_replace.denormalize(scalar_value(model.critic_replace, state));
                tr.value_p[static_cast<size_t>(t)] =
                    model.norm_inspect.denormalize(scalar_value(model.critic_inspect, state));
                StepOutcome out = env.step(a_r, class_p + 1);
                tr.reward[static_cast<size_t>(t)] = out.combined;
                tr.inert2[static_cast<size_t>(t)] = out.agent2_inert ? 1 : 0;
                tr.terminal[static_cast<size_t>(t)] = out.terminal ? 1 : 0;
                sum_combined += out.combined;
                sum_replace += out.r_replace;
                sum_inspect += out.r_inspect;
            }
            tr.bootstrap_r = model.norm_replace.denormalize(
                scalar_value(model.critic_replace, env.observation()));
            tr.bootstrap_p = model.norm_inspect.denormalize(
                scalar_value(model.critic_inspect, env.observation()));
        }
        curves.combined_reward.push_back(sum_combined);
        curves.replace_reward.push_back(sum_replace);
        curves.inspect_reward.push_back(sum_inspect);

        // Advantages and raw targets per agent, then running value normalization.
        std::vector<double> all_targets_r, all_targets_p;
        for (auto& tr : trajs) {
            compute_gae(tr.reward, tr.value_r, tr.terminal, tr.bootstrap_r, config.gamma,
                        config.gae_lambda, config.value_target_as_printed, tr.adv_r, tr.tgt_r);
            compute_gae(tr.reward, tr.value_p, tr.terminal, tr.bootstrap_p, config.gamma,
                        config.gae_lambda, config.value_target_as_printed, tr.adv_p, tr.tgt_p);
            all_targets_r.insert(all_targets_r.end(), tr.tgt_r.begin(), tr.tgt_r.end());
            all_targets_p.insert(all_targets_p.end(), tr.tgt_p.begin(), tr.tgt_p.end());
        }
        model.norm_replace.update(all_targets_r);
        model.norm_inspect.update(all_targets_p);

        std::vector<std::vector<double>*> adv_r_groups, adv_p_groups;
        double adv_abs_sum = 0.0;
        for (auto& tr : trajs) {
            adv_r_groups.push_back(&tr.adv_r);
            adv_p_groups.push_back(&tr.adv_p);
            for (double a : tr.adv_r) adv_abs_sum += std::abs(a);
        }
        if (!std::isfinite(adv_abs_sum)) {
            model = last_good;
            throw ModelStateError("train_ppo: diverged (non-finite advantages) at episode " +
                                  std::to_string(ep) + "; model restored to last good state");
        }
        normalize_in_place(adv_r_groups);
        normalize_in_place(adv_p_groups);

        // Chunked minibatch updates.
        std::vector<std::pair<int, int>> chunks;  // (trajectory, offset)
        for (int n = 0; n < config.batch_size; ++n)
            for (int c = 0; c < n_chunks; ++c) chunks.emplace_back(n, c * config.chunk_length);

        for (int k = 0; k < config.update_epochs; ++k) {
            shuffle_rng.shuffle(chunks);
            for (size_t start = 0; start < chunks.size();
                 start += static_cast<size_t>(config.minibatch_chunks)) {
                const size_t end =
                    std::min(chunks.size(), start + static_cast<size_t>(config.minibatch_chunks));
                const int steps = static_cast<int>(end - start) * config.chunk_length;
                UpdateBatch batch;
                batch.states.resize(kStateDim, steps);
                batch.action_r.reserve(static_cast<size_t>(steps));
                int col = 0;
                for (size_t ci = start; ci < end; ++ci) {
                    const auto [tn, off] = chunks[ci];
                    TrajectoryBuffer& tr = trajs[static_cast<size_t>(tn)];
                    for (int t = off; t < off + config.chunk_length; ++t, ++col) {
                        batch.states.col(col) = tr.states.col(t);
                        batch.action_r.push_back(tr.action_r[static_cast<size_t>(t)]);
                        batch.action_p.push_back(tr.action_p[static_cast<size_t>(t)]);
                        batch.old_logp_r.push_back(tr.logp_r[static_cast<size_t>(t)]);
                        batch.old_logp_p.push_back(tr.logp_p[static_cast<size_t>(t)]);
                        batch.adv_r.push_back(tr.adv_r[static_cast<size_t>(t)]);
                        batch.adv_p.push_back(tr.adv_p[static_cast<size_t>(t)]);
                        batch.vtarget_r.push_back(
                            model.norm_replace.normalize(tr.tgt_r[static_cast<size_t>(t)]));
                        batch.vtarget_p.push_back(
                            model.norm_inspect.normalize(tr.tgt_p[static_cast<size_t>(t)]));
                        batch.inert2.push_back(tr.inert2[static_cast<size_t>(t)]);
                    }
                }

                Mlp grad_ar = zero_like(model.actor_replace);
                Mlp grad_ap = zero_like(model.actor_inspect);
                const double objective =
                    actor_objective_and_grad(model.actor_replace, model.actor_inspect, batch,
                                             config.clip_epsilon, entropy_coef, true, grad_ar,
                                             grad_ap);
                Mlp grad_cr = zero_like(model.critic_replace);
                Mlp grad_cp = zero_like(model.critic_inspect);
                const double closs = critic_loss_and_grad(model.critic_replace,
                                                          model.critic_inspect, batch, grad_cr,
                                                          grad_cp);
                if (!std::isfinite(objective) || !std::isfinite(closs)) {
                    model = last_good;
                    throw ModelStateError("train_ppo: diverged (non-finite loss) at episode " +
                                          std::to_string(ep) +
                                          "; model restored to last good state");
                }

                // Ascent on the actor objective -> descend on its negation.
                auto gv_ar = param_views(grad_ar, "g");
                auto gv_ap = param_views(grad_ap, "g");
                scale_all(gv_ar, -1.0);
                scale_all(gv_ap, -1.0);
                clip_global_norm(gv_ar, config.grad_clip);
                clip_global_norm(gv_ap, config.grad_clip);
                adam_ar.step(views_ar, gv_ar, lr);
                adam_ap.step(views_ap, gv_ap, lr);

                auto gv_cr = param_views(grad_cr, "g");
                auto gv_cp = param_views(grad_cp, "g");
                clip_global_norm(gv_cr, config.grad_clip);
                clip_global_norm(gv_cp, config.grad_clip);
                adam_cr.step(views_cr, gv_cr, lr);
                adam_cp.step(views_cp, gv_cp, lr);
            }
        }
        last_good = model;
    }
    return curves;
}

namespace {

void add_mlp(Checkpoint& ckpt, const Mlp& net, const std::string& prefix) {
    ckpt.add_scalar(prefix + ".layers", static_cast<double>(net.w.size()));
    for (size_t i = 0; i < net.w.size(); ++i) {
        ckpt.add(prefix + ".w" + std::to_string(i), net.w[i]);
        ckpt.add(prefix + ".b" + std::to_string(i), net.b[i]);
    }
}

Mlp read_mlp(const Checkpoint& ckpt, const std::string& prefix) {
    Mlp net;
    const int layers = static_cast<int>(ckpt.scalar(prefix + ".layers"));
    for (int i = 0; i < layers; ++i) {
        net.w.push_back(ckpt.matrix(prefix + ".w" + std::to_string(i)));
        net.b.push_back(ckpt.vector(prefix + ".b" + std::to_string(i)));
    }
    return net;
}

}  // namespace

Checkpoint ppo_to_checkpoint(const PpoModel& model, const std::string& config_json) {
    Checkpoint ckpt("policy", config_json);
    add_mlp(ckpt, model.actor_replace, "actor_r");
    add_mlp(ckpt, model.actor_inspect, "actor_p");
    add_mlp(ckpt, model.critic_replace, "critic_r");
    add_mlp(ckpt, model.critic_inspect, "critic_p");
    ckpt.add_scalar("norm_r.count", model.norm_replace.count);
    ckpt.add_scalar("norm_r.mean", model.norm_replace.mean);
    ckpt.add_scalar("norm_r.m2", model.norm_replace.m2);
    ckpt.add_scalar("norm_p.count", model.norm_inspect.count);
    ckpt.add_scalar("norm_p.mean", model.norm_inspect.mean);
    ckpt.add_scalar("norm_p.m2", model.norm_inspect.m2);
    return ckpt;
}

PpoModel ppo_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.kind() != "policy") throw IoError("checkpoint kind is not 'policy'");
    PpoModel model;
    model.actor_replace = read_mlp(ckpt, "actor_r");
    model.actor_inspect = read_mlp(ckpt, "actor_p");
    model.critic_replace = read_mlp(ckpt, "critic_r");
    model.critic_inspect = read_mlp(ckpt, "critic_p");
    model.norm_replace = {ckpt.scalar("norm_r.count"), ckpt.scalar("norm_r.mean"),
                          ckpt.scalar("norm_r.m2")};
    model.norm_inspect = {ckpt.scalar("norm_p.count"), ckpt.scalar("norm_p.mean"),
                          ckpt.scalar("norm_p.m2")};
    return model;
}

}  // namespace pdm
