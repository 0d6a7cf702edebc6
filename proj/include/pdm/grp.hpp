#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <vector>

#include "pdm/checkpoint.hpp"
#include "pdm/cmapss.hpp"
#include "pdm/dist_fit.hpp"
#include "pdm/params.hpp"
#include "pdm/rng.hpp"

namespace pdm {

// Gated recurrent unit, bias-free:
//   r = sigmoid(W_r h + U_r x)
//   z = sigmoid(W_z h + U_z x)
//   c = tanh(W_c (r .* h) + U_c x)
//   h' = (1 - z) .* h + z .* c
struct GruParams {
    Eigen::MatrixXd w_r, u_r;  // reset gate
    Eigen::MatrixXd w_z, u_z;  // update gate
    Eigen::MatrixXd w_c, u_c;  // candidate
    int hidden() const { return static_cast<int>(w_r.rows()); }
    int input() const { return static_cast<int>(u_r.cols()); }
};

// Per-feature scalar score weight/bias; scores pass through tanh, weights are
// softmax-normalized along the time axis and pooled by a weighted sum.
struct AttentionParams {
    Eigen::VectorXd weight;
    Eigen::VectorXd bias;
};

struct HeadParams {
    Eigen::MatrixXd w1;  // fusion_hidden x (hidden + handcrafted)
    Eigen::VectorXd b1;
    Eigen::MatrixXd w2;  // 5 x fusion_hidden
    Eigen::VectorXd b2;
    double dropout_rate = 0.2;
    // Fixed output gain in cycles per raw unit; keeps adaptive-moment step
    // sizes commensurate with the 0..125 label range.
    double output_scale = 125.0;
};

struct GrpModel {
    GruParams gru;
    AttentionParams attn;
    HeadParams head;
    bool is_finite() const;
};

GrpModel make_grp_model(Rng& rng, int input = kSignalCount, int hidden = 64,
                        int fusion_hidden = 128, int handcrafted = 48,
                        double dropout_rate = 0.2, double output_scale = 125.0);

// Single recurrence step; throws ContractViolation on dimension mismatch.
Eigen::VectorXd gru_step(const Eigen::VectorXd& h_prev, const Eigen::VectorXd& x,
                         const GruParams& params);

// Runs the window (s x input) through the GRU from h_0 = 0; column t holds the
// hidden state after consuming window row t. Result is hidden x s.
Eigen::MatrixXd gru_sequence(const Eigen::MatrixXd& window, const GruParams& params);

// Temporal attention pooling of H (hidden x s) into a context vector.
Eigen::VectorXd attention(const Eigen::MatrixXd& H, const AttentionParams& params);

// Raw (pre-repair) network outputs for one sample; inference mode, no dropout.
Eigen::VectorXd predict_raw(const GrpModel& model, const Eigen::MatrixXd& window,
                            const Eigen::VectorXd& handcrafted);
// Batched raw outputs (5 x B).
Eigen::MatrixXd predict_raw_batch(const GrpModel& model,
                                  const std::vector<const WindowSample*>& batch);

// Sort ascending, then clamp below at 0. Idempotent.
std::array<double, 5> monotone_repair(const Eigen::VectorXd& raw);

// Full inference path; throws ModelStateError on non-finite outputs.
QuantileSet predict_quantiles(const GrpModel& model, const WindowSample& sample);

// q * max(0, y - y_hat) + (1 - q) * max(0, y_hat - y)
double pinball_loss(double y, double y_hat, double q);

struct GrpGradients {
    GruParams gru;
    AttentionParams attn;
    HeadParams head;
};

// Mean over samples of the summed five-level pinball loss, on raw outputs.
// Throws ContractViolation on an empty batch.
double grp_loss(const GrpModel& model, const std::vector<const WindowSample*>& batch);
// Same loss plus analytic gradients. `dropout_mask` (fusion_hidden x B,
// already scaled by 1/keep) applies training-mode dropout; null disables it.
double grp_loss_and_grad(const GrpModel& model, const std::vector<const WindowSample*>& batch,
                         GrpGradients& grads, const Eigen::MatrixXd* dropout_mask = nullptr);

std::vector<ParamView> param_views(GrpModel& model);
std::vector<ParamView> param_views(GrpGradients& grads);

struct GrpTrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 256;
    int max_epochs = 20;
    int patience = 3;
    double dropout_rate = 0.2;
    int hidden = 64;
    int fusion_hidden = 128;
    uint64_t seed = 1;
    int validation_last_cycles = 50;  // windows this close to failure form the RMSE monitor
    void validate() const;
    std::string to_json() const;
    static GrpTrainConfig from_json(const std::string& json);
};

struct GrpTrainResult {
    GrpModel model;  // best checkpoint by validation RMSE
    std::vector<double> train_loss_history;
    std::vector<double> validation_rmse_history;
    int best_epoch = -1;
};

// Minibatch adaptive-moment training with early stopping on the validation
// RMSE (median quantile as the point prediction). Deterministic given seed.
GrpTrainResult train_grp(const std::vector<WindowSample>& samples, const GrpTrainConfig& config);

// Pooled RMSE of the median quantile over each engine's final k windows.
// Engines with fewer than k windows contribute all of them (with a warning).
double evaluate_rmse_last_k(const GrpModel& model,
                            const std::vector<std::vector<WindowSample>>& engine_windows,
                            int k = 30);

Checkpoint grp_to_checkpoint(const GrpModel& model, const std::string& config_json);
GrpModel grp_from_checkpoint(const Checkpoint& ckpt);

}  // namespace pdm
