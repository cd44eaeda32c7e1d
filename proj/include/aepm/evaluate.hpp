#pragma once

#include <array>
#include <string>
#include <vector>

#include "aepm/model.hpp"
#include "aepm/motion.hpp"

namespace aepm {

struct EvalOptions {
    int flexion_channel = 0;       // euler-xyz knee scalar channel
    bool best_fixed_sample = false; // use one sample index for all frames
};

/// One evaluated frame of a sliding-window pass: the last-frame prediction
/// of the window ending at that frame.
struct EvalFrame {
    std::array<double, 3> truth;
    std::array<double, 3> mu;
    double sigma = 0.0;
    std::vector<std::array<double, 3>> samples; // N entries
};

struct EvalTrace {
    Convention convention = Convention::euler_xyz;
    int flexion_channel = 0;
    std::string label;
    int64_t first_frame = 0;       // absolute index of the first evaluated frame (l - 1)
    std::vector<EvalFrame> frames; // T - l + 1 entries
};

struct ScenarioReport {
    std::string label;
    int64_t frames = 0;
    double mean_rmse_deg = 0.0;
    double best_rmse_deg = 0.0;
    double mean_sigma_deg = 0.0;
};

/// Scalar knee angle in degrees: euler-xyz passes the flexion channel
/// through; exponential-map takes the axis-angle magnitude.
double knee_angle_deg(const std::array<double, 3>& v, Convention convention,
                      int flexion_channel = 0);

/// Predicted sigma in degrees under the sequence convention.
double sigma_deg(double sigma, Convention convention);

/// Slide an l-frame window one frame at a time, mask joint k, run the model
/// and keep only each window's last-frame prediction.
EvalTrace sliding_infer(const ModelParameters& params, const MotionSequence& seq, int k,
                        const EvalOptions& opts = {});

/// Mean RMSE among the N predictions: each sample's RMSE over the trace,
/// averaged over samples.
double rmse_mean(const EvalTrace& trace);
/// Best RMSE: per-frame oracle sample selection by default; with
/// `best_fixed_sample`, the single best sample index over the whole trace.
/// Never exceeds rmse_mean.
double rmse_best(const EvalTrace& trace, bool best_fixed_sample = false);
double mean_sigma_deg(const EvalTrace& trace);

/// Per-scenario metrics plus a frame-weighted "average" row.
std::vector<ScenarioReport> scenario_report(const ModelParameters& params,
                                            const std::vector<MotionSequence>& sequences, int k,
                                            const EvalOptions& opts = {});

/// Aggregate already-computed traces (grouped by label) into a report.
std::vector<ScenarioReport> aggregate_traces(const std::vector<EvalTrace>& traces,
                                             const EvalOptions& opts = {});

std::string report_tsv(const std::vector<ScenarioReport>& report);
std::string trace_csv(const EvalTrace& trace);

} // namespace aepm
