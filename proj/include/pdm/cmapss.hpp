#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <string>
#include <vector>

namespace pdm {

inline constexpr int kSignalCount = 24;  // 3 operational settings + 21 sensors

// One run-to-failure engine: cycle-indexed signal matrix (T x 24), cycles 1..T.
struct EngineTrace {
    int engine_id = 0;
    std::string subset_tag;
    Eigen::MatrixXd signals;  // T rows x 24 columns

    int cycles() const { return static_cast<int>(signals.rows()); }
};

// Whitespace-separated text, 26 numeric columns per line:
// unit id, cycle, 3 settings, 21 sensors. Trailing blanks tolerated.
std::vector<EngineTrace> parse_cmapss(std::istream& in, const std::string& subset_tag = "");
std::vector<EngineTrace> parse_cmapss_file(const std::string& path, const std::string& subset_tag = "");

struct DatasetSplit {
    std::vector<EngineTrace> train_engines;
    std::vector<EngineTrace> test_engines;
};

// First floor(fraction*N) engines (file order, ascending unit id) go to train.
DatasetSplit split_engines(std::vector<EngineTrace> traces, double fraction = 0.5);

// Condition-clustered z-scoring. Clusters come from rounding the settings
// (integer, 2 decimals, integer), which separates the 6 documented conditions
// of FD002/FD004 and collapses the setting jitter of FD001/FD003 into a
// single cluster.
struct NormalizationStats {
    struct Cluster {
        Eigen::Vector3d key;            // rounded settings
        Eigen::VectorXd mean;           // 24
        Eigen::VectorXd stddev;         // 24; exactly 0 marks a constant signal
        long long count = 0;
    };
    std::vector<Cluster> clusters;

    int cluster_count() const { return static_cast<int>(clusters.size()); }
    // Exact key match, else nearest cluster (fallback used at apply time).
    int find_cluster(const Eigen::Vector3d& settings, bool* exact = nullptr) const;
};

NormalizationStats fit_normalization(const std::vector<EngineTrace>& train_engines);
// Z-scores every signal within its condition cluster; constant signals map to 0.
// Unseen clusters fall back to the nearest one (a warning goes to stderr once).
EngineTrace apply_normalization(const EngineTrace& trace, const NormalizationStats& stats);

// Fixed-length window with capped RUL label and handcrafted features.
struct WindowSample {
    int engine_id = 0;
    int end_cycle = 0;
    double rul_label = 0.0;
    Eigen::MatrixXd window;      // s x 24
    Eigen::VectorXd handcrafted; // 48: per-signal mean then OLS slope
};

// Per-signal mean and least-squares trend slope against index 0..s-1.
// Layout: [mean_1..mean_24, slope_1..slope_24].
Eigen::VectorXd handcrafted_features(const Eigen::MatrixXd& window);

// Sample i (0-based) covers cycles [i*p+1, i*p+s]; label = min(T - s - i*p, cap).
// Traces shorter than the window are skipped with a warning (empty result).
std::vector<WindowSample> make_windows(const EngineTrace& trace, int window_size = 60,
                                       int stride = 1, double rul_cap = 125.0);

// Window cache CSV: engine_id, end_cycle, rul_label, 48 handcrafted values,
// then the s x 24 window flattened row-major. Round-trips bit-exactly.
void write_window_cache(std::ostream& out, const std::vector<WindowSample>& samples);
std::vector<WindowSample> read_window_cache(std::istream& in);

}  // namespace pdm
