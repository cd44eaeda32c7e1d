#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aepm/checkpoint.hpp"
#include "aepm/evaluate.hpp"
#include "aepm/losses.hpp"
#include "aepm/model.hpp"
#include "aepm/motion.hpp"
#include "aepm/optimizer.hpp"

namespace aepm {

enum class Stage { s1, s2 };

inline const char* to_string(Stage s) { return s == Stage::s1 ? "S1" : "S2"; }

/// Stage schedule: epochs before the shift train on the mean-over-samples
/// loss, later epochs on the best-of-N loss.
inline Stage stage_of(int epoch, int stage_shift_epoch) {
    return epoch < stage_shift_epoch ? Stage::s1 : Stage::s2;
}

struct TrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 128;
    double weight_decay = 0.01;
    int max_epochs = 500;
    int stage_shift_epoch = 30; // 30 for H36M-style runs, 3 for CMU-style runs
    int patience = 20;          // early stop after this many stale epochs
    int64_t window_stride = 1;
    uint64_t seed = 0;

    void validate() const;
};

struct LossReport {
    int epoch = 0;
    Stage stage = Stage::s1;
    double train_loss = 0.0;
    double val_rmse_deg = 0.0;
    double seconds = 0.0;
};

struct TrainDataset {
    std::vector<MotionSequence> train_sequences;
    std::vector<MotionSequence> validation_sequences; // disjoint subjects
    int masked_joint = 0;
    EvalOptions eval;
};

struct TrainResult {
    ModelParameters params; // best-validation checkpoint
    CheckpointMeta meta;
    std::vector<LossReport> log;
};

/// One optimizer step on the stage loss over a batch of masked windows.
/// Returns the batch loss computed from the pre-step parameters. Per-window
/// gradients are reduced in window order, so results do not depend on the
/// thread count.
double train_step(ModelParameters& params, AdamW& optimizer,
                  const std::vector<const PoseWindow*>& batch, Stage stage);

/// Two-stage training with early stopping on validation mean RMSE.
/// `resume_from` continues epoch numbering from a previous checkpoint.
TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config,
                  const TrainDataset& dataset, const ModelParameters* resume_from = nullptr,
                  int start_epoch = 0);

std::string training_log_tsv(const std::vector<LossReport>& log);

struct GradCheckResult {
    double max_rel_error_s1 = 0.0;
    double max_rel_error_s2 = 0.0;
    double min_sample_std = 0.0;   // smallest std_N(S) seen (clamp margin)
    double min_argmin_gap = 0.0;   // smallest gap between best and runner-up norms
    double max_rel_error() const {
        return max_rel_error_s1 > max_rel_error_s2 ? max_rel_error_s1 : max_rel_error_s2;
    }
};

/// Compare analytic gradients of both stage losses against central finite
/// differences over a random subsample of coordinates per parameter group.
/// Relative error is |a - n| / max(1, |a| + |n|).
GradCheckResult grad_check(const ModelConfig& config, uint64_t seed, double step = 1e-4,
                           int coords_per_group = 200);

} // namespace aepm
