#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pdm/checkpoint.hpp"
#include "pdm/env.hpp"
#include "pdm/params.hpp"
#include "pdm/rng.hpp"

namespace pdm {

// Feedforward net: tanh hidden layers, linear output layer.
struct Mlp {
    std::vector<Eigen::MatrixXd> w;
    std::vector<Eigen::VectorXd> b;
    int input() const { return static_cast<int>(w.front().cols()); }
    int output() const { return static_cast<int>(w.back().rows()); }
    bool is_finite() const;
};

// Orthogonalized rows per layer; the final layer starts at zero so actor
// policies begin uniform and critics begin at zero value.
Mlp make_mlp(Rng& rng, const std::vector<int>& sizes, bool zero_final = true);

struct MlpCache {
    std::vector<Eigen::MatrixXd> acts;  // acts[0] = input, then post-activation per layer
};

Eigen::MatrixXd mlp_forward(const Mlp& net, const Eigen::MatrixXd& input,
                            MlpCache* cache = nullptr);
// Accumulates parameter gradients for d(output); grads must be zero-shaped like net.
void mlp_backward(const Mlp& net, const MlpCache& cache, const Eigen::MatrixXd& d_out,
                  Mlp& grads);

Mlp zero_like(const Mlp& net);
std::vector<ParamView> param_views(Mlp& net, const std::string& prefix);

struct Categorical {
    Eigen::VectorXd probs;
    Eigen::VectorXd log_probs;
    double log_prob(int action) const { return log_probs(action); }
    double entropy() const;
    int sample(Rng& rng) const;
    int argmax() const;  // ties resolve to the lowest index
};

// Softmax over the actor's logits; throws ModelStateError on non-finite logits.
Categorical policy_forward(const Mlp& actor, const ObservationState& state);

double entropy(const Eigen::VectorXd& probs);

// Backward recursion of the generalized advantage estimate.
//   zeta_t = R_t + gamma * V(s_{t+1}) * (1 - term_t) - V(s_t)
//   A_t    = zeta_t + gamma * lambda * A_{t+1} * (1 - term_t)
// Targets follow the printed form A_t + V(s_{t+1}) by default; the standard
// form A_t + V(s_t) is available behind the flag.
void compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                 const std::vector<uint8_t>& terminals, double bootstrap_value, double gamma,
                 double lambda, bool target_as_printed, std::vector<double>& advantages,
                 std::vector<double>& targets);

struct PpoConfig {
    double gamma = 0.99;
    double gae_lambda = 0.95;
    double clip_epsilon = 0.2;
    double entropy_coef = 0.01;
    double learning_rate = 3e-4;  // decays linearly over episodes
    int horizon = 2048;           // steps per trajectory (T)
    int chunk_length = 64;        // L; horizon must divide into chunks
    int update_epochs = 4;        // K
    int batch_size = 1;           // trajectories per episode
    int minibatch_chunks = 8;     // chunks per minibatch
    int episodes = 200;           // E
    double grad_clip = 0.5;
    uint64_t seed = 1;
    bool value_target_as_printed = true;

    void validate() const;
    std::string to_json() const;
    static PpoConfig from_json(const std::string& json);
};

// Running statistics over raw value targets; critics train in normalized
// space and are denormalized wherever values feed the advantage estimate.
struct ValueNormalizer {
    double count = 0.0;
    double mean = 0.0;
    double m2 = 0.0;
    void update(const std::vector<double>& targets);
    double stddev() const;
    double normalize(double raw) const { return (raw - mean) / stddev(); }
    double denormalize(double normed) const { return normed * stddev() + mean; }
};

struct PpoModel {
    Mlp actor_replace;    // 50 -> 128 -> 128 -> 2
    Mlp actor_inspect;    // 50 -> 128 -> 128 -> 50
    Mlp critic_replace;   // 50 -> 256 -> 64 -> 1
    Mlp critic_inspect;
    ValueNormalizer norm_replace, norm_inspect;
    bool is_finite() const;
};

PpoModel make_ppo_model(uint64_t seed);

// Greedy evaluation actions: (replace action, inspection gap in 1..50).
std::pair<int, int> act_greedy(const PpoModel& model, const ObservationState& state);

// Flat step arrays for one update minibatch.
struct UpdateBatch {
    Eigen::MatrixXd states;  // kStateDim x N
    std::vector<int> action_r, action_p;  // class indices (gap = class + 1)
    std::vector<double> old_logp_r, old_logp_p;
    std::vector<double> adv_r, adv_p;          // normalized advantages
    std::vector<double> vtarget_r, vtarget_p;  // normalized-space regression targets
    std::vector<uint8_t> inert2;               // agent-2 mask
    int size() const { return static_cast<int>(action_r.size()); }
};

// Clipped-surrogate-plus-entropy objective (to maximize), averaged over both
// agents with the 1/(2N) convention. Returns the objective value and writes
// ascent gradients. Agent-2 terms vanish at inert steps when the mask is on.
double actor_objective_and_grad(const Mlp& actor_r, const Mlp& actor_p, const UpdateBatch& batch,
                                double clip_epsilon, double entropy_coef, bool apply_inert_mask,
                                Mlp& grad_r, Mlp& grad_p);

// Mean-squared value regression over both critics with the 1/(2N) convention.
double critic_loss_and_grad(const Mlp& critic_r, const Mlp& critic_p, const UpdateBatch& batch,
                            Mlp& grad_r, Mlp& grad_p);

struct TrainCurves {
    std::vector<double> combined_reward;  // per-iteration sum of R_t
    std::vector<double> replace_reward;   // per-iteration sum of r^r
    std::vector<double> inspect_reward;   // per-iteration sum of r^p
};

// Full training loop per the chunked-minibatch scheme: collect batch_size
// trajectories of horizon steps, estimate advantages, split into chunks,
// run update_epochs of random minibatches, with gradient clipping and a
// linearly decaying learning rate. Deterministic given the config seed.
TrainCurves train_ppo(std::shared_ptr<const StateProvider> provider, const RewardConfig& reward,
                      PpoModel& model, const PpoConfig& config);

Checkpoint ppo_to_checkpoint(const PpoModel& model, const std::string& config_json);
PpoModel ppo_from_checkpoint(const Checkpoint& ckpt);

}  // namespace pdm
