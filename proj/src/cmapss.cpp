#include "pdm/cmapss.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "pdm/csv.hpp"
#include "pdm/errors.hpp"

namespace pdm {

namespace {

std::vector<std::string_view> split_whitespace(std::string_view line) {
    std::vector<std::string_view> out;
    size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        size_t start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
        if (i > start) out.push_back(line.substr(start, i - start));
    }
    return out;
}

double parse_token(std::string_view tok, int lineno) {
    double v = 0.0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
        throw ParseError(lineno, "non-numeric token '" + std::string(tok) + "'");
    return v;
}

}  // namespace

std::vector<EngineTrace> parse_cmapss(std::istream& in, const std::string& subset_tag) {
    struct Builder {
        std::vector<Eigen::Matrix<double, 1, kSignalCount>> rows;
        int last_cycle = 0;
    };
    std::map<int, Builder> builders;  // ordered by unit id

    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto toks = split_whitespace(line);
        if (toks.empty()) continue;  // blank lines tolerated
        if (toks.size() != 26)
            throw ParseError(lineno, "expected 26 columns, got " + std::to_string(toks.size()));
        double unit_f = parse_token(toks[0], lineno);
        double cycle_f = parse_token(toks[1], lineno);
        int unit = static_cast<int>(unit_f);
        int cycle = static_cast<int>(cycle_f);
        if (unit <= 0 || unit_f != unit) throw ParseError(lineno, "bad unit id");
        if (cycle <= 0 || cycle_f != cycle) throw ParseError(lineno, "bad cycle number");

        Builder& b = builders[unit];
        if (cycle != b.last_cycle + 1)
            throw IntegrityError("unit " + std::to_string(unit) + ": non-contiguous cycle " +
                                 std::to_string(cycle) + " after " + std::to_string(b.last_cycle) +
                                 " (line " + std::to_string(lineno) + ")");
        b.last_cycle = cycle;
        Eigen::Matrix<double, 1, kSignalCount> row;
        for (int c = 0; c < kSignalCount; ++c) row(c) = parse_token(toks[2 + c], lineno);
        b.rows.push_back(row);
    }

    std::vector<EngineTrace> traces;
    traces.reserve(builders.size());
    for (auto& [unit, b] : builders) {
        EngineTrace t;
        t.engine_id = unit;
        t.subset_tag = subset_tag;
        t.signals.resize(static_cast<Eigen::Index>(b.rows.size()), kSignalCount);
        for (size_t r = 0; r < b.rows.size(); ++r) t.signals.row(static_cast<Eigen::Index>(r)) = b.rows[r];
        traces.push_back(std::move(t));
    }
    return traces;
}

std::vector<EngineTrace> parse_cmapss_file(const std::string& path, const std::string& subset_tag) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return parse_cmapss(in, subset_tag);
}

DatasetSplit split_engines(std::vector<EngineTrace> traces, double fraction) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw ConfigError("split fraction must be in (0,1), got " + std::to_string(fraction));
    // Floor, not ceil: 249 engines at 0.5 give 124 training engines.
    const auto n_train = static_cast<size_t>(std::floor(fraction * static_cast<double>(traces.size()) + 1e-9));
    DatasetSplit split;
    split.train_engines.assign(traces.begin(), traces.begin() + static_cast<long>(n_train));
    split.test_engines.assign(traces.begin() + static_cast<long>(n_train), traces.end());
    return split;
}

namespace {

// Per-setting rounding precision: altitude-like and throttle-like settings to
// integers, the Mach-like setting to 2 decimals. This separates the six
// documented FD002/FD004 conditions while collapsing the small per-cycle
// jitter of every subset (including the 0.25 condition value, which sits on a
// 1-decimal rounding boundary).
Eigen::Vector3d round_settings(const Eigen::Vector3d& s) {
    return {std::round(s(0)), std::round(s(1) * 100.0) / 100.0, std::round(s(2))};
}

// Integer key so cluster lookup never depends on floating-point equality.
std::array<long long, 3> cluster_key(const Eigen::Vector3d& s) {
    return {llround(s(0)), llround(s(1) * 100.0), llround(s(2))};
}

}  // namespace

int NormalizationStats::find_cluster(const Eigen::Vector3d& settings, bool* exact) const {
    auto key = cluster_key(settings);
    double best_dist = std::numeric_limits<double>::infinity();
    int best = -1;
    for (size_t i = 0; i < clusters.size(); ++i) {
        if (cluster_key(clusters[i].key) == key) {
            if (exact) *exact = true;
            return static_cast<int>(i);
        }
        double d = (clusters[i].key - round_settings(settings)).squaredNorm();
        if (d < best_dist) {
            best_dist = d;
            best = static_cast<int>(i);
        }
    }
    if (exact) *exact = false;
    return best;
}

NormalizationStats fit_normalization(const std::vector<EngineTrace>& train_engines) {
    struct Acc {
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(kSignalCount);
        Eigen::VectorXd sqdev = Eigen::VectorXd::Zero(kSignalCount);
        long long n = 0;
    };
    // Two passes: means first, then squared deviations. The one-pass
    // sum-of-squares form cancels catastrophically on settings with large
    // means and tiny jitter.
    std::map<std::array<long long, 3>, Acc> accs;
    for (const auto& t : train_engines) {
        for (Eigen::Index r = 0; r < t.signals.rows(); ++r) {
            Acc& a = accs[cluster_key(t.signals.row(r).head<3>())];
            a.sum += t.signals.row(r).transpose();
            ++a.n;
        }
    }
    if (accs.empty()) throw ConfigError("fit_normalization: no training rows");
    std::map<std::array<long long, 3>, Eigen::VectorXd> means;
    for (auto& [key, a] : accs) means[key] = a.sum / static_cast<double>(a.n);
    for (const auto& t : train_engines) {
        for (Eigen::Index r = 0; r < t.signals.rows(); ++r) {
            const auto key = cluster_key(t.signals.row(r).head<3>());
            accs[key].sqdev += (t.signals.row(r).transpose() - means[key]).cwiseAbs2();
        }
    }

    NormalizationStats stats;
    for (const auto& [key, a] : accs) {
        NormalizationStats::Cluster c;
        c.key = Eigen::Vector3d(static_cast<double>(key[0]), static_cast<double>(key[1]) / 100.0,
                                static_cast<double>(key[2]));
        c.count = a.n;
        c.mean = means[key];
        c.stddev = (a.sqdev / static_cast<double>(a.n)).cwiseSqrt();
        // Constant signals within a cluster get stddev exactly 0; they are kept
        // (mapped to 0 on apply) so every subset retains the 24-column contract.
        for (int i = 0; i < kSignalCount; ++i)
            if (c.stddev(i) < 1e-12) c.stddev(i) = 0.0;
        stats.clusters.push_back(std::move(c));
    }
    return stats;
}

EngineTrace apply_normalization(const EngineTrace& trace, const NormalizationStats& stats) {
    EngineTrace out = trace;
    bool warned = false;
    for (Eigen::Index r = 0; r < trace.signals.rows(); ++r) {
        Eigen::Vector3d settings = trace.signals.row(r).head<3>();
        bool exact = false;
        int ci = stats.find_cluster(settings, &exact);
        if (ci < 0) throw ConfigError("apply_normalization: empty stats");
        if (!exact && !warned) {
            std::cerr << "warning: engine " << trace.engine_id
                      << ": unseen operating condition, using nearest cluster\n";
            warned = true;
        }
        const auto& c = stats.clusters[static_cast<size_t>(ci)];
        for (int s = 0; s < kSignalCount; ++s) {
            double sd = c.stddev(s);
            out.signals(r, s) = sd == 0.0 ? 0.0 : (trace.signals(r, s) - c.mean(s)) / sd;
        }
    }
    return out;
}

Eigen::VectorXd handcrafted_features(const Eigen::MatrixXd& window) {
    const auto s = window.rows();
    const auto n = window.cols();
    Eigen::VectorXd out(2 * n);
    // OLS slope against t = 0..s-1: slope = sum((t - tbar)(x - xbar)) / sum((t - tbar)^2)
    const double tbar = static_cast<double>(s - 1) / 2.0;
    double denom = 0.0;
    for (Eigen::Index t = 0; t < s; ++t) denom += (static_cast<double>(t) - tbar) * (static_cast<double>(t) - tbar);
    for (Eigen::Index j = 0; j < n; ++j) {
        const double mean = window.col(j).mean();
        double cov = 0.0;
        for (Eigen::Index t = 0; t < s; ++t)
            cov += (static_cast<double>(t) - tbar) * (window(t, j) - mean);
        out(j) = mean;
        out(n + j) = denom > 0.0 ? cov / denom : 0.0;
    }
    return out;
}

std::vector<WindowSample> make_windows(const EngineTrace& trace, int window_size, int stride,
                                       double rul_cap) {
    std::vector<WindowSample> samples;
    const int T = trace.cycles();
    if (T < window_size) {
        std::cerr << "warning: engine " << trace.engine_id << " has " << T
                  << " cycles < window " << window_size << ", skipped\n";
        return samples;
    }
    const int count = (T - window_size) / stride + 1;
    samples.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        WindowSample w;
        w.engine_id = trace.engine_id;
        w.end_cycle = i * stride + window_size;
        w.rul_label = std::min(static_cast<double>(T - window_size - i * stride), rul_cap);
        w.window = trace.signals.middleRows(i * stride, window_size);
        w.handcrafted = handcrafted_features(w.window);
        samples.push_back(std::move(w));
    }
    return samples;
}

void write_window_cache(std::ostream& out, const std::vector<WindowSample>& samples) {
    csv::Writer w(out);
    std::vector<std::string> header = {"engine_id", "end_cycle", "rul_label"};
    const int n_hand = samples.empty() ? 48 : static_cast<int>(samples[0].handcrafted.size());
    const int s = samples.empty() ? 0 : static_cast<int>(samples[0].window.rows());
    for (int i = 0; i < n_hand; ++i) header.push_back("h" + std::to_string(i));
    for (int r = 0; r < s; ++r)
        for (int c = 0; c < kSignalCount; ++c)
            header.push_back("w" + std::to_string(r) + "_" + std::to_string(c));
    w.header(header);
    for (const auto& sm : samples) {
        w.field(sm.engine_id).field(sm.end_cycle).field(sm.rul_label);
        for (Eigen::Index i = 0; i < sm.handcrafted.size(); ++i) w.field(sm.handcrafted(i));
        for (Eigen::Index r = 0; r < sm.window.rows(); ++r)
            for (Eigen::Index c = 0; c < sm.window.cols(); ++c) w.field(sm.window(r, c));
        w.end_row();
    }
}

std::vector<WindowSample> read_window_cache(std::istream& in) {
    csv::Table t = csv::read_table(in);
    std::vector<WindowSample> samples;
    if (t.header.size() < 3) throw IoError("window cache: bad header");
    int n_hand = 0;
    while (3 + n_hand < static_cast<int>(t.header.size()) &&
           t.header[static_cast<size_t>(3 + n_hand)][0] == 'h')
        ++n_hand;
    const int n_window = static_cast<int>(t.header.size()) - 3 - n_hand;
    if (n_window % kSignalCount != 0) throw IoError("window cache: window columns not a multiple of 24");
    const int s = n_window / kSignalCount;
    for (const auto& row : t.rows) {
        WindowSample w;
        w.engine_id = static_cast<int>(row.integer(0));
        w.end_cycle = static_cast<int>(row.integer(1));
        w.rul_label = row.num(2);
        w.handcrafted.resize(n_hand);
        for (int i = 0; i < n_hand; ++i) w.handcrafted(i) = row.num(static_cast<size_t>(3 + i));
        w.window.resize(s, kSignalCount);
        size_t k = static_cast<size_t>(3 + n_hand);
        for (int r = 0; r < s; ++r)
            for (int c = 0; c < kSignalCount; ++c) w.window(r, c) = row.num(k++);
        samples.push_back(std::move(w));
    }
    return samples;
}

}  // namespace pdm
