#pragma once

#include <functional>
#include <string>
#include <vector>

#include "aepm/train.hpp"

namespace aepm {

struct AblationSubset {
    std::string label;
    std::vector<int> indices; // into the dataset joint list; must include the masked knee
};

struct AblationRow {
    std::string label;
    int joints = 0;
    double mean_rmse_deg = 0.0;
    double best_rmse_deg = 0.0;
    double mean_sigma_deg = 0.0;
};

/// Train one model per joint subset (via select_joints) and report
/// validation mean RMSE, best RMSE and average predicted sigma in degrees.
/// `on_trained`, when set, receives each subset's training result.
std::vector<AblationRow> ablation_run(
    const ModelConfig& base, const TrainConfig& train_config, const TrainDataset& dataset,
    const std::vector<AblationSubset>& subsets,
    const std::function<void(const std::string&, const TrainResult&)>& on_trained = nullptr);

std::string ablation_tsv(const std::vector<AblationRow>& rows);

} // namespace aepm
