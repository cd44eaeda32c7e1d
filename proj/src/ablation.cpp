#include "aepm/ablation.hpp"

#include <algorithm>
#include <cstdio>

namespace aepm {

namespace {

std::string format_g9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

} // namespace

std::vector<AblationRow> ablation_run(
    const ModelConfig& base, const TrainConfig& train_config, const TrainDataset& dataset,
    const std::vector<AblationSubset>& subsets,
    const std::function<void(const std::string&, const TrainResult&)>& on_trained) {
    if (subsets.empty()) throw std::invalid_argument("ablation_run: no subsets");

    std::vector<AblationRow> rows;
    for (const auto& subset : subsets) {
        auto knee_pos = std::find(subset.indices.begin(), subset.indices.end(), dataset.masked_joint);
        if (knee_pos == subset.indices.end())
            throw std::invalid_argument("ablation_run: subset '" + subset.label +
                                        "' does not include the masked knee joint");
        const int remapped_knee = static_cast<int>(knee_pos - subset.indices.begin());

        TrainDataset sub = dataset;
        sub.masked_joint = remapped_knee;
        sub.train_sequences.clear();
        sub.validation_sequences.clear();
        for (const auto& seq : dataset.train_sequences)
            sub.train_sequences.push_back(select_joints(seq, subset.indices));
        for (const auto& seq : dataset.validation_sequences)
            sub.validation_sequences.push_back(select_joints(seq, subset.indices));

        ModelConfig cfg = base;
        cfg.joints = static_cast<int>(subset.indices.size());

        TrainResult trained = train(cfg, train_config, sub);
        if (on_trained) on_trained(subset.label, trained);

        auto report = scenario_report(trained.params, sub.validation_sequences, remapped_knee, sub.eval);
        const ScenarioReport& average = report.back();
        AblationRow row;
        row.label = subset.label;
        row.joints = cfg.joints;
        row.mean_rmse_deg = average.mean_rmse_deg;
        row.best_rmse_deg = average.best_rmse_deg;
        row.mean_sigma_deg = average.mean_sigma_deg;
        rows.push_back(row);
    }
    return rows;
}

std::string ablation_tsv(const std::vector<AblationRow>& rows) {
    std::string out = "subset\tn_joints\tmean_rmse_deg\tbest_rmse_deg\tmean_sigma_deg\n";
    for (const auto& r : rows) {
        out += r.label + "\t" + std::to_string(r.joints) + "\t" + format_g9(r.mean_rmse_deg) +
               "\t" + format_g9(r.best_rmse_deg) + "\t" + format_g9(r.mean_sigma_deg) + "\n";
    }
    return out;
}

} // namespace aepm
