#include "pdm/grp.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <numeric>

#include <json.hpp>

#include "pdm/errors.hpp"

namespace pdm {

namespace {

Eigen::MatrixXd uniform_init(Rng& rng, Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.uniform(-limit, limit);
    return m;
}

inline Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& x) {
    return (1.0 / (1.0 + (-x.array()).exp())).matrix();
}

}  // namespace

bool GrpModel::is_finite() const {
    auto ok = [](const Eigen::MatrixXd& m) { return m.allFinite(); };
    return ok(gru.w_r) && ok(gru.u_r) && ok(gru.w_z) && ok(gru.u_z) && ok(gru.w_c) &&
           ok(gru.u_c) && attn.weight.allFinite() && attn.bias.allFinite() && ok(head.w1) &&
           head.b1.allFinite() && ok(head.w2) && head.b2.allFinite();
}

GrpModel make_grp_model(Rng& rng, int input, int hidden, int fusion_hidden, int handcrafted,
                        double dropout_rate, double output_scale) {
    GrpModel m;
    m.gru.w_r = uniform_init(rng, hidden, hidden, hidden);
    m.gru.u_r = uniform_init(rng, hidden, input, input);
    m.gru.w_z = uniform_init(rng, hidden, hidden, hidden);
    m.gru.u_z = uniform_init(rng, hidden, input, input);
    m.gru.w_c = uniform_init(rng, hidden, hidden, hidden);
    m.gru.u_c = uniform_init(rng, hidden, input, input);
    m.attn.weight = uniform_init(rng, hidden, 1, 1).col(0);
    m.attn.bias = Eigen::VectorXd::Zero(hidden);
    m.head.w1 = uniform_init(rng, fusion_hidden, hidden + handcrafted, hidden + handcrafted);
    m.head.b1 = Eigen::VectorXd::Zero(fusion_hidden);
    m.head.w2 = uniform_init(rng, 5, fusion_hidden, fusion_hidden);
    m.head.b2 = Eigen::VectorXd::Zero(5);
    m.head.dropout_rate = dropout_rate;
    m.head.output_scale = output_scale;
    return m;
}

Eigen::VectorXd gru_step(const Eigen::VectorXd& h_prev, const Eigen::VectorXd& x,
                         const GruParams& params) {
    if (h_prev.size() != params.hidden() || x.size() != params.input())
        throw ContractViolation("gru_step: dimension mismatch");
    Eigen::VectorXd r = sigmoid(params.w_r * h_prev + params.u_r * x);
    Eigen::VectorXd z = sigmoid(params.w_z * h_prev + params.u_z * x);
    Eigen::VectorXd c = (params.w_c * r.cwiseProduct(h_prev) + params.u_c * x).array().tanh();
    return (1.0 - z.array()) * h_prev.array() + z.array() * c.array();
}

Eigen::MatrixXd gru_sequence(const Eigen::MatrixXd& window, const GruParams& params) {
    const auto s = window.rows();
    Eigen::MatrixXd H(params.hidden(), s);
    Eigen::VectorXd h = Eigen::VectorXd::Zero(params.hidden());
    for (Eigen::Index t = 0; t < s; ++t) {
        h = gru_step(h, window.row(t).transpose(), params);
        H.col(t) = h;
    }
    return H;
}

Eigen::VectorXd attention(const Eigen::MatrixXd& H, const AttentionParams& params) {
    // Scores per (feature, time); softmax along time within each feature row.
    Eigen::MatrixXd scores =
        ((H.array().colwise() * params.weight.array()).colwise() + params.bias.array()).tanh();
    Eigen::VectorXd row_max = scores.rowwise().maxCoeff();
    Eigen::MatrixXd ex = (scores.colwise() - row_max).array().exp();
    Eigen::VectorXd denom = ex.rowwise().sum();
    Eigen::MatrixXd weights = ex.array().colwise() / denom.array();
    return (H.array() * weights.array()).rowwise().sum();
}

std::array<double, 5> monotone_repair(const Eigen::VectorXd& raw) {
    if (raw.size() != 5) throw ContractViolation("monotone_repair: expected 5 outputs");
    std::array<double, 5> q{raw(0), raw(1), raw(2), raw(3), raw(4)};
    std::sort(q.begin(), q.end());
    for (double& v : q) v = std::max(v, 0.0);
    return q;
}

double pinball_loss(double y, double y_hat, double q) {
    if (!(q > 0.0 && q < 1.0)) throw ContractViolation("pinball_loss: level outside (0,1)");
    const double diff = y - y_hat;
    return diff >= 0.0 ? q * diff : (1.0 - q) * (-diff);
}

namespace {

struct Batch {
    int b = 0, s = 0, n_in = 0, n_hand = 0;
    std::vector<Eigen::MatrixXd> x;  // s entries, n_in x B
    Eigen::MatrixXd handcrafted;     // n_hand x B
    Eigen::VectorXd labels;          // B
};

Batch gather(const std::vector<const WindowSample*>& batch) {
    if (batch.empty()) throw ContractViolation("grp: empty batch");
    Batch out;
    out.b = static_cast<int>(batch.size());
    out.s = static_cast<int>(batch[0]->window.rows());
    out.n_in = static_cast<int>(batch[0]->window.cols());
    out.n_hand = static_cast<int>(batch[0]->handcrafted.size());
    out.x.assign(static_cast<size_t>(out.s), Eigen::MatrixXd(out.n_in, out.b));
    out.handcrafted.resize(out.n_hand, out.b);
    out.labels.resize(out.b);
    for (int i = 0; i < out.b; ++i) {
        const WindowSample& w = *batch[static_cast<size_t>(i)];
        if (w.window.rows() != out.s || w.window.cols() != out.n_in ||
            w.handcrafted.size() != out.n_hand)
            throw ContractViolation("grp: inconsistent sample shapes in batch");
        for (int t = 0; t < out.s; ++t) out.x[static_cast<size_t>(t)].col(i) = w.window.row(t).transpose();
        out.handcrafted.col(i) = w.handcrafted;
        out.labels(i) = w.rul_label;
    }
    return out;
}

struct ForwardCache {
    std::vector<Eigen::MatrixXd> r, z, c, h;  // per step, hidden x B
    std::vector<Eigen::MatrixXd> scores, weights;
    Eigen::MatrixXd context;     // hidden x B
    Eigen::MatrixXd fused;       // (hidden + hand) x B
    Eigen::MatrixXd a1;          // fusion_hidden x B (post-tanh)
    Eigen::MatrixXd a1_dropped;  // after dropout mask
    Eigen::MatrixXd yhat;        // 5 x B, scaled
};

void forward_batch(const GrpModel& model, const Batch& in, const Eigen::MatrixXd* dropout_mask,
                   ForwardCache& fc) {
    const int hidden = model.gru.hidden();
    const int s = in.s;
    const int B = in.b;
    if (model.gru.input() != in.n_in) throw ContractViolation("grp: window width != gru input size");

    fc.r.resize(static_cast<size_t>(s));
    fc.z.resize(static_cast<size_t>(s));
    fc.c.resize(static_cast<size_t>(s));
    fc.h.resize(static_cast<size_t>(s));
    Eigen::MatrixXd h_prev = Eigen::MatrixXd::Zero(hidden, B);
    for (int t = 0; t < s; ++t) {
        const Eigen::MatrixXd& xt = in.x[static_cast<size_t>(t)];
        Eigen::MatrixXd r = sigmoid(model.gru.w_r * h_prev + model.gru.u_r * xt);
        Eigen::MatrixXd z = sigmoid(model.gru.w_z * h_prev + model.gru.u_z * xt);
        Eigen::MatrixXd c =
            (model.gru.w_c * r.cwiseProduct(h_prev) + model.gru.u_c * xt).array().tanh();
        Eigen::MatrixXd h =
            ((1.0 - z.array()) * h_prev.array() + z.array() * c.array()).matrix();
        fc.r[static_cast<size_t>(t)] = std::move(r);
        fc.z[static_cast<size_t>(t)] = std::move(z);
        fc.c[static_cast<size_t>(t)] = std::move(c);
        fc.h[static_cast<size_t>(t)] = h;
        h_prev = std::move(h);
    }

    // Attention over time, batched: scores[t] is hidden x B.
    fc.scores.resize(static_cast<size_t>(s));
    fc.weights.resize(static_cast<size_t>(s));
    Eigen::MatrixXd row_max = Eigen::MatrixXd::Constant(hidden, B, -1.0);  // tanh range
    for (int t = 0; t < s; ++t) {
        fc.scores[static_cast<size_t>(t)] =
            ((fc.h[static_cast<size_t>(t)].array().colwise() * model.attn.weight.array())
                 .colwise() +
             model.attn.bias.array())
                .tanh();
        row_max = row_max.cwiseMax(fc.scores[static_cast<size_t>(t)]);
    }
    Eigen::MatrixXd denom = Eigen::MatrixXd::Zero(hidden, B);
    for (int t = 0; t < s; ++t) {
        fc.weights[static_cast<size_t>(t)] =
            (fc.scores[static_cast<size_t>(t)] - row_max).array().exp();
        denom += fc.weights[static_cast<size_t>(t)];
    }
    fc.context = Eigen::MatrixXd::Zero(hidden, B);
    for (int t = 0; t < s; ++t) {
        fc.weights[static_cast<size_t>(t)].array() /= denom.array();
        fc.context.array() +=
            fc.h[static_cast<size_t>(t)].array() * fc.weights[static_cast<size_t>(t)].array();
    }

    fc.fused.resize(hidden + in.n_hand, B);
    fc.fused.topRows(hidden) = fc.context;
    fc.fused.bottomRows(in.n_hand) = in.handcrafted;
    fc.a1 = ((model.head.w1 * fc.fused).colwise() + model.head.b1).array().tanh();
    fc.a1_dropped = dropout_mask ? fc.a1.cwiseProduct(*dropout_mask) : fc.a1;
    fc.yhat = model.head.output_scale *
              (((model.head.w2 * fc.a1_dropped).colwise() + model.head.b2));
}

double loss_from_outputs(const Eigen::MatrixXd& yhat, const Eigen::VectorXd& labels) {
    const int B = static_cast<int>(labels.size());
    double total = 0.0;
    for (int i = 0; i < B; ++i)
        for (int m = 0; m < 5; ++m)
            total += pinball_loss(labels(i), yhat(m, i), kQuantileLevels[static_cast<size_t>(m)]);
    return total / static_cast<double>(B);
}

void zero_like(const GrpModel& model, GrpGradients& g) {
    g.gru.w_r = Eigen::MatrixXd::Zero(model.gru.w_r.rows(), model.gru.w_r.cols());
    g.gru.u_r = Eigen::MatrixXd::Zero(model.gru.u_r.rows(), model.gru.u_r.cols());
    g.gru.w_z = Eigen::MatrixXd::Zero(model.gru.w_z.rows(), model.gru.w_z.cols());
    g.gru.u_z = Eigen::MatrixXd::Zero(model.gru.u_z.rows(), model.gru.u_z.cols());
    g.gru.w_c = Eigen::MatrixXd::Zero(model.gru.w_c.rows(), model.gru.w_c.cols());
    g.gru.u_c = Eigen::MatrixXd::Zero(model.gru.u_c.rows(), model.gru.u_c.cols());
    g.attn.weight = Eigen::VectorXd::Zero(model.attn.weight.size());
    g.attn.bias = Eigen::VectorXd::Zero(model.attn.bias.size());
    g.head.w1 = Eigen::MatrixXd::Zero(model.head.w1.rows(), model.head.w1.cols());
    g.head.b1 = Eigen::VectorXd::Zero(model.head.b1.size());
    g.head.w2 = Eigen::MatrixXd::Zero(model.head.w2.rows(), model.head.w2.cols());
    g.head.b2 = Eigen::VectorXd::Zero(model.head.b2.size());
}

}  // namespace

Eigen::MatrixXd predict_raw_batch(const GrpModel& model,
                                  const std::vector<const WindowSample*>& batch) {
    Batch in = gather(batch);
    ForwardCache fc;
    forward_batch(model, in, nullptr, fc);
    return fc.yhat;
}

Eigen::VectorXd predict_raw(const GrpModel& model, const Eigen::MatrixXd& window,
                            const Eigen::VectorXd& handcrafted) {
    WindowSample tmp;
    tmp.window = window;
    tmp.handcrafted = handcrafted;
    std::vector<const WindowSample*> batch = {&tmp};
    return predict_raw_batch(model, batch).col(0);
}

QuantileSet predict_quantiles(const GrpModel& model, const WindowSample& sample) {
    Eigen::VectorXd raw = predict_raw(model, sample.window, sample.handcrafted);
    if (!raw.allFinite())
        throw ModelStateError("predict_quantiles: non-finite outputs (untrained or diverged model)");
    auto repaired = monotone_repair(raw);
    QuantileSet qs = QuantileSet::from_values(repaired, sample.engine_id, sample.end_cycle);
    return qs;
}

double grp_loss(const GrpModel& model, const std::vector<const WindowSample*>& batch) {
    Batch in = gather(batch);
    ForwardCache fc;
    forward_batch(model, in, nullptr, fc);
    return loss_from_outputs(fc.yhat, in.labels);
}

double grp_loss_and_grad(const GrpModel& model, const std::vector<const WindowSample*>& batch,
                         GrpGradients& grads, const Eigen::MatrixXd* dropout_mask) {
    Batch in = gather(batch);
    ForwardCache fc;
    forward_batch(model, in, dropout_mask, fc);
    const double loss = loss_from_outputs(fc.yhat, in.labels);

    const int hidden = model.gru.hidden();
    const int s = in.s;
    const int B = in.b;
    zero_like(model, grads);

    // d loss / d yhat
    Eigen::MatrixXd d_yhat(5, B);
    for (int i = 0; i < B; ++i) {
        for (int m = 0; m < 5; ++m) {
            const double q = kQuantileLevels[static_cast<size_t>(m)];
            const double diff = in.labels(i) - fc.yhat(m, i);
            d_yhat(m, i) = (diff > 0.0 ? -q : (diff < 0.0 ? 1.0 - q : 0.0)) / static_cast<double>(B);
        }
    }

    Eigen::MatrixXd d_out = model.head.output_scale * d_yhat;
    grads.head.w2 = d_out * fc.a1_dropped.transpose();
    grads.head.b2 = d_out.rowwise().sum();
    Eigen::MatrixXd d_a1 = model.head.w2.transpose() * d_out;
    if (dropout_mask) d_a1 = d_a1.cwiseProduct(*dropout_mask);
    Eigen::MatrixXd d_pre1 = d_a1.array() * (1.0 - fc.a1.array().square());
    grads.head.w1 = d_pre1 * fc.fused.transpose();
    grads.head.b1 = d_pre1.rowwise().sum();
    Eigen::MatrixXd d_fused = model.head.w1.transpose() * d_pre1;
    Eigen::MatrixXd d_context = d_fused.topRows(hidden);

    // Attention backward. d_H[t] collects both attention paths.
    std::vector<Eigen::MatrixXd> d_H(static_cast<size_t>(s));
    Eigen::MatrixXd sum_term = Eigen::MatrixXd::Zero(hidden, B);
    for (int t = 0; t < s; ++t)
        sum_term.array() += fc.weights[static_cast<size_t>(t)].array() *
                            (fc.h[static_cast<size_t>(t)].array() * d_context.array());
    for (int t = 0; t < s; ++t) {
        const auto& ht = fc.h[static_cast<size_t>(t)];
        const auto& at = fc.weights[static_cast<size_t>(t)];
        const auto& et = fc.scores[static_cast<size_t>(t)];
        Eigen::MatrixXd d_at = ht.array() * d_context.array();
        Eigen::MatrixXd d_et = at.array() * (d_at.array() - sum_term.array());
        Eigen::MatrixXd d_vt = (1.0 - et.array().square()) * d_et.array();
        grads.attn.weight += (ht.array() * d_vt.array()).rowwise().sum().matrix();
        grads.attn.bias += d_vt.rowwise().sum();
        d_H[static_cast<size_t>(t)] =
            (at.array() * d_context.array()).matrix() +
            (d_vt.array().colwise() * model.attn.weight.array()).matrix();
    }

    // BPTT through the GRU.
    Eigen::MatrixXd d_h = Eigen::MatrixXd::Zero(hidden, B);
    for (int t = s - 1; t >= 0; --t) {
        d_h += d_H[static_cast<size_t>(t)];
        const Eigen::MatrixXd h_prev =
            t == 0 ? Eigen::MatrixXd::Zero(hidden, B) : fc.h[static_cast<size_t>(t - 1)];
        const auto& rt = fc.r[static_cast<size_t>(t)];
        const auto& zt = fc.z[static_cast<size_t>(t)];
        const auto& ct = fc.c[static_cast<size_t>(t)];
        const auto& xt = in.x[static_cast<size_t>(t)];

        Eigen::MatrixXd d_z = (ct.array() - h_prev.array()) * d_h.array();
        Eigen::MatrixXd d_c = zt.array() * d_h.array();
        Eigen::MatrixXd d_hprev = ((1.0 - zt.array()) * d_h.array()).matrix();

        Eigen::MatrixXd d_pc = (1.0 - ct.array().square()) * d_c.array();
        grads.gru.w_c += d_pc * rt.cwiseProduct(h_prev).transpose();
        grads.gru.u_c += d_pc * xt.transpose();
        Eigen::MatrixXd back_c = model.gru.w_c.transpose() * d_pc;
        Eigen::MatrixXd d_r = h_prev.array() * back_c.array();
        d_hprev.array() += rt.array() * back_c.array();

        Eigen::MatrixXd d_pz = zt.array() * (1.0 - zt.array()) * d_z.array();
        grads.gru.w_z += d_pz * h_prev.transpose();
        grads.gru.u_z += d_pz * xt.transpose();
        d_hprev += model.gru.w_z.transpose() * d_pz;

        Eigen::MatrixXd d_pr = rt.array() * (1.0 - rt.array()) * d_r.array();
        grads.gru.w_r += d_pr * h_prev.transpose();
        grads.gru.u_r += d_pr * xt.transpose();
        d_hprev += model.gru.w_r.transpose() * d_pr;

        d_h = std::move(d_hprev);
    }
    return loss;
}

std::vector<ParamView> param_views(GrpModel& m) {
    return {
        {"gru.w_r", m.gru.w_r.data(), m.gru.w_r.size()},
        {"gru.u_r", m.gru.u_r.data(), m.gru.u_r.size()},
        {"gru.w_z", m.gru.w_z.data(), m.gru.w_z.size()},
        {"gru.u_z", m.gru.u_z.data(), m.gru.u_z.size()},
        {"gru.w_c", m.gru.w_c.data(), m.gru.w_c.size()},
        {"gru.u_c", m.gru.u_c.data(), m.gru.u_c.size()},
        {"attn.weight", m.attn.weight.data(), m.attn.weight.size()},
        {"attn.bias", m.attn.bias.data(), m.attn.bias.size()},
        {"head.w1", m.head.w1.data(), m.head.w1.size()},
        {"head.b1", m.head.b1.data(), m.head.b1.size()},
        {"head.w2", m.head.w2.data(), m.head.w2.size()},
        {"head.b2", m.head.b2.data(), m.head.b2.size()},
    };
}

std::vector<ParamView> param_views(GrpGradients& g) {
    return {
        {"gru.w_r", g.gru.w_r.data(), g.gru.w_r.size()},
        {"gru.u_r", g.gru.u_r.data(), g.gru.u_r.size()},
        {"gru.w_z", g.gru.w_z.data(), g.gru.w_z.size()},
        {"gru.u_z", g.gru.u_z.data(), g.gru.u_z.size()},
        {"gru.w_c", g.gru.w_c.data(), g.gru.w_c.size()},
        {"gru.u_c", g.gru.u_c.data(), g.gru.u_c.size()},
        {"attn.weight", g.attn.weight.data(), g.attn.weight.size()},
        {"attn.bias", g.attn.bias.data(), g.attn.bias.size()},
        {"head.w1", g.head.w1.data(), g.head.w1.size()},
        {"head.b1", g.head.b1.data(), g.head.b1.size()},
        {"head.w2", g.head.w2.data(), g.head.w2.size()},
        {"head.b2", g.head.b2.data(), g.head.b2.size()},
    };
}

void GrpTrainConfig::validate() const {
    if (learning_rate < 0.0) throw ConfigError("grp: negative learning rate");
    if (batch_size <= 0 || max_epochs <= 0 || hidden <= 0 || fusion_hidden <= 0)
        throw ConfigError("grp: sizes must be positive");
    if (patience < 1) throw ConfigError("grp: patience must be >= 1");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("grp: dropout rate outside [0,1)");
}

std::string GrpTrainConfig::to_json() const {
    nlohmann::ordered_json j;
    j["learning_rate"] = learning_rate;
    j["batch_size"] = batch_size;
    j["max_epochs"] = max_epochs;
    j["patience"] = patience;
    j["dropout_rate"] = dropout_rate;
    j["hidden"] = hidden;
    j["fusion_hidden"] = fusion_hidden;
    j["seed"] = seed;
    j["validation_last_cycles"] = validation_last_cycles;
    return j.dump();
}

GrpTrainConfig GrpTrainConfig::from_json(const std::string& json) {
    GrpTrainConfig c;
    auto j = nlohmann::json::parse(json);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
    c.hidden = j.value("hidden", c.hidden);
    c.fusion_hidden = j.value("fusion_hidden", c.fusion_hidden);
    c.seed = j.value("seed", c.seed);
    c.validation_last_cycles = j.value("validation_last_cycles", c.validation_last_cycles);
    return c;
}

namespace {

double median_prediction_rmse(const GrpModel& model, const std::vector<const WindowSample*>& set) {
    if (set.empty()) return 0.0;
    double sq = 0.0;
    const size_t chunk = 512;
    for (size_t start = 0; start < set.size(); start += chunk) {
        const size_t end = std::min(set.size(), start + chunk);
        std::vector<const WindowSample*> part(set.begin() + static_cast<long>(start),
                                              set.begin() + static_cast<long>(end));
        Eigen::MatrixXd yhat = predict_raw_batch(model, part);
        for (size_t i = 0; i < part.size(); ++i) {
            auto repaired = monotone_repair(yhat.col(static_cast<Eigen::Index>(i)));
            const double err = repaired[2] - part[i]->rul_label;
            sq += err * err;
        }
    }
    return std::sqrt(sq / static_cast<double>(set.size()));
}

}  // namespace

GrpTrainResult train_grp(const std::vector<WindowSample>& samples, const GrpTrainConfig& config) {
    config.validate();
    if (samples.empty()) throw ContractViolation("train_grp: no samples");

    Rng rng(config.seed);
    Rng init_rng = rng.fork(1);
    Rng shuffle_rng = rng.fork(2);
    Rng dropout_rng = rng.fork(3);

    const int n_hand = static_cast<int>(samples[0].handcrafted.size());
    const int n_in = static_cast<int>(samples[0].window.cols());
    // Output gain spans the label range so adaptive-moment steps move the
    // predictions cycles at a time rather than fractions of a cycle.
    double label_span = 1.0;
    for (const auto& w : samples) label_span = std::max(label_span, w.rul_label);
    GrpModel model = make_grp_model(init_rng, n_in, config.hidden, config.fusion_hidden, n_hand,
                                    config.dropout_rate, label_span);

    // Validation monitor: windows within the last `validation_last_cycles`
    // cycles of each engine. They stay in the training stream; holding out all
    // low-RUL windows would leave the label range below 50 unlearnable.
    std::map<int, int> engine_last;
    for (const auto& w : samples) {
        auto [it, inserted] = engine_last.try_emplace(w.engine_id, w.end_cycle);
        if (!inserted) it->second = std::max(it->second, w.end_cycle);
    }
    std::vector<const WindowSample*> validation;
    for (const auto& w : samples)
        if (w.end_cycle > engine_last[w.engine_id] - config.validation_last_cycles)
            validation.push_back(&w);

    std::vector<size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);

    GrpGradients grads;
    Adam adam;
    auto params = param_views(model);

    GrpTrainResult result;
    double best_rmse = std::numeric_limits<double>::infinity();
    int epochs_since_best = 0;

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        // Linear decay settles the piecewise-linear quantile loss, which a
        // fixed adaptive-moment step keeps oscillating around its minimum.
        const double lr = config.learning_rate *
                          (1.0 - static_cast<double>(epoch) / static_cast<double>(config.max_epochs));
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        size_t seen = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
            std::vector<const WindowSample*> batch;
            batch.reserve(end - start);
            for (size_t i = start; i < end; ++i) batch.push_back(&samples[order[i]]);

            Eigen::MatrixXd mask;
            const Eigen::MatrixXd* mask_ptr = nullptr;
            if (config.dropout_rate > 0.0) {
                const double keep = 1.0 - config.dropout_rate;
                mask.resize(config.fusion_hidden, static_cast<Eigen::Index>(batch.size()));
                for (Eigen::Index cc = 0; cc < mask.cols(); ++cc)
                    for (Eigen::Index rr = 0; rr < mask.rows(); ++rr)
                        mask(rr, cc) = dropout_rng.uniform() < keep ? 1.0 / keep : 0.0;
                mask_ptr = &mask;
            }

            const double loss = grp_loss_and_grad(model, batch, grads, mask_ptr);
            if (!std::isfinite(loss))
                throw ModelStateError(
                    "train_grp: non-finite loss at epoch " + std::to_string(epoch) +
                    "; try a smaller learning rate");
            epoch_loss += loss * static_cast<double>(batch.size());
            seen += batch.size();

            auto grad_views = param_views(grads);
            adam.step(params, grad_views, lr);
        }
        result.train_loss_history.push_back(epoch_loss / static_cast<double>(seen));

        const double val_rmse = median_prediction_rmse(model, validation);
        result.validation_rmse_history.push_back(val_rmse);
        if (val_rmse < best_rmse) {
            best_rmse = val_rmse;
            result.model = model;
            result.best_epoch = epoch;
            epochs_since_best = 0;
        } else {
            ++epochs_since_best;
            if (epochs_since_best >= config.patience) break;
        }
    }
    if (result.best_epoch < 0) {
        result.model = model;
        result.best_epoch = 0;
    }
    return result;
}

double evaluate_rmse_last_k(const GrpModel& model,
                            const std::vector<std::vector<WindowSample>>& engine_windows, int k) {
    double sq = 0.0;
    size_t n = 0;
    for (const auto& windows : engine_windows) {
        if (windows.empty()) continue;
        size_t take = static_cast<size_t>(k);
        if (windows.size() < take) {
            std::cerr << "warning: engine " << windows[0].engine_id << " has only "
                      << windows.size() << " windows (< " << k << "), using all\n";
            take = windows.size();
        }
        std::vector<const WindowSample*> tail;
        tail.reserve(take);
        for (size_t i = windows.size() - take; i < windows.size(); ++i) tail.push_back(&windows[i]);
        Eigen::MatrixXd yhat = predict_raw_batch(model, tail);
        for (size_t i = 0; i < tail.size(); ++i) {
            auto repaired = monotone_repair(yhat.col(static_cast<Eigen::Index>(i)));
            const double err = repaired[2] - tail[i]->rul_label;
            sq += err * err;
            ++n;
        }
    }
    if (n == 0) throw ContractViolation("evaluate_rmse_last_k: no windows");
    return std::sqrt(sq / static_cast<double>(n));
}

Checkpoint grp_to_checkpoint(const GrpModel& model, const std::string& config_json) {
    Checkpoint ckpt("grp", config_json);
    GrpModel& m = const_cast<GrpModel&>(model);
    for (const auto& v : param_views(m))
        ckpt.add(v.name, Eigen::MatrixXd(Eigen::Map<const Eigen::VectorXd>(v.data, v.size)));
    // Shapes are not recoverable from flat arrays alone; store them.
    ckpt.add_scalar("meta.hidden", model.gru.hidden());
    ckpt.add_scalar("meta.input", model.gru.input());
    ckpt.add_scalar("meta.fusion_hidden", static_cast<double>(model.head.w1.rows()));
    ckpt.add_scalar("meta.handcrafted",
                    static_cast<double>(model.head.w1.cols() - model.gru.hidden()));
    ckpt.add_scalar("meta.dropout_rate", model.head.dropout_rate);
    ckpt.add_scalar("meta.output_scale", model.head.output_scale);
    return ckpt;
}

GrpModel grp_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.kind() != "grp") throw IoError("checkpoint kind is not 'grp'");
    const int hidden = static_cast<int>(ckpt.scalar("meta.hidden"));
    const int input = static_cast<int>(ckpt.scalar("meta.input"));
    const int fusion = static_cast<int>(ckpt.scalar("meta.fusion_hidden"));
    const int hand = static_cast<int>(ckpt.scalar("meta.handcrafted"));
    GrpModel m;
    auto reshape = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols) {
        Eigen::MatrixXd flat = ckpt.matrix(name);
        if (flat.size() != rows * cols) throw IoError("checkpoint: bad shape for " + name);
        return Eigen::MatrixXd(Eigen::Map<const Eigen::MatrixXd>(flat.data(), rows, cols));
    };
    m.gru.w_r = reshape("gru.w_r", hidden, hidden);
    m.gru.u_r = reshape("gru.u_r", hidden, input);
    m.gru.w_z = reshape("gru.w_z", hidden, hidden);
    m.gru.u_z = reshape("gru.u_z", hidden, input);
    m.gru.w_c = reshape("gru.w_c", hidden, hidden);
    m.gru.u_c = reshape("gru.u_c", hidden, input);
    m.attn.weight = reshape("attn.weight", hidden, 1).col(0);
    m.attn.bias = reshape("attn.bias", hidden, 1).col(0);
    m.head.w1 = reshape("head.w1", fusion, hidden + hand);
    m.head.b1 = reshape("head.b1", fusion, 1).col(0);
    m.head.w2 = reshape("head.w2", 5, fusion);
    m.head.b2 = reshape("head.b2", 5, 1).col(0);
    m.head.dropout_rate = ckpt.scalar("meta.dropout_rate");
    m.head.output_scale = ckpt.scalar("meta.output_scale");
    return m;
}

}  // namespace pdm
