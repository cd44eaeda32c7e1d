#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "aepm/ablation.hpp"
#include "aepm/attention_analysis.hpp"
#include "aepm/checkpoint.hpp"
#include "aepm/errors.hpp"
#include "aepm/evaluate.hpp"
#include "aepm/motion.hpp"
#include "aepm/rng.hpp"
#include "aepm/run_config.hpp"
#include "aepm/train.hpp"

namespace fs = std::filesystem;
using namespace aepm;

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw IoError("write failed for '" + path + "'");
}

std::string sanitize(const std::string& s) {
    std::string out;
    for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) != 0) ? c : '_';
    return out;
}

std::vector<std::string> split_names(const std::string& csv) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : csv) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

struct EvalInputs {
    std::vector<MotionSequence> sequences;
    int masked_joint = 0;
    EvalOptions eval;
};

EvalInputs load_eval_inputs(const std::string& data_glob, const std::string& mask_joint,
                            const std::string& joints_csv, int flexion_channel,
                            bool best_fixed) {
    DataConfig dc;
    auto files = expand_glob(data_glob);
    if (files.empty()) throw std::invalid_argument("data pattern '" + data_glob + "' matches no files");
    dc.validation_paths = files;
    dc.masked_joint = mask_joint;
    dc.joint_subset = split_names(joints_csv);
    dc.flexion_channel = flexion_channel;
    dc.best_fixed_sample = best_fixed;
    LoadedData loaded = load_dataset(dc);
    EvalInputs out;
    out.sequences = std::move(loaded.validation_sequences);
    out.masked_joint = loaded.masked_joint;
    out.eval = loaded.eval;
    return out;
}

std::vector<AblationSubset> parse_subsets_file(const std::string& path,
                                               const MotionSequence& reference) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<AblationSubset> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto colon = line.find(':');
        if (colon == std::string::npos)
            throw aepm::ParseError(path + ": line " + std::to_string(lineno) +
                             ": expected '<label>: <joint,joint,...>'");
        AblationSubset subset;
        subset.label = line.substr(0, colon);
        while (!subset.label.empty() && subset.label.back() == ' ') subset.label.pop_back();
        std::string names = line.substr(colon + 1);
        for (auto& name : split_names(names)) {
            while (!name.empty() && name.front() == ' ') name.erase(name.begin());
            while (!name.empty() && name.back() == ' ') name.pop_back();
            if (name.empty()) continue;
            int idx = reference.joint_index(name);
            if (idx < 0)
                throw aepm::ParseError(path + ": line " + std::to_string(lineno) + ": unknown joint '" +
                                 name + "'");
            subset.indices.push_back(idx);
        }
        if (subset.indices.empty())
            throw aepm::ParseError(path + ": line " + std::to_string(lineno) + ": empty subset");
        out.push_back(std::move(subset));
    }
    if (out.empty()) throw aepm::ParseError(path + ": no subsets defined");
    return out;
}

int cmd_synth(const std::string& spec_path, const std::string& out_path,
              std::optional<uint64_t> seed) {
    SynthGaitSpec spec = load_synth_spec(spec_path);
    if (seed) spec.seed = *seed;
    MotionSequence seq = synth_gait(spec);
    write_motion_csv(seq, out_path);
    std::cout << "wrote " << out_path << " (" << seq.num_frames() << " frames, "
              << seq.num_joints() << " joints)\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_override,
              std::optional<uint64_t> seed) {
    RunConfig rc = load_run_config(config_path);
    if (seed) rc.seed = *seed;
    if (!out_override.empty()) rc.out_dir = out_override;
    rc.train.seed = derive_seed(rc.seed, "train");

    LoadedData data = load_dataset(rc.data);
    TrainDataset dataset;
    dataset.train_sequences = std::move(data.train_sequences);
    dataset.validation_sequences = std::move(data.validation_sequences);
    dataset.masked_joint = data.masked_joint;
    dataset.eval = data.eval;

    std::optional<ModelParameters> resume;
    int start_epoch = 0;
    if (!rc.resume_from.empty()) {
        CheckpointMeta meta;
        resume = load_checkpoint(rc.resume_from, &meta);
        start_epoch = static_cast<int>(meta.epochs_completed);
        if (resume->config.joints != rc.model.joints || resume->config.frames != rc.model.frames)
            throw std::invalid_argument("resume checkpoint does not match the configured model");
    }

    TrainResult result = train(rc.model, rc.train, dataset,
                               resume ? &*resume : nullptr, start_epoch);

    fs::create_directories(rc.out_dir);
    save_checkpoint((fs::path(rc.out_dir) / "checkpoint.bin").string(), result.params, result.meta);
    write_text((fs::path(rc.out_dir) / "train_log.tsv").string(), training_log_tsv(result.log));
    std::cout << "trained " << result.meta.epochs_completed << " epochs, best val RMSE "
              << result.meta.best_val_rmse_deg << " deg\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_glob,
             const std::string& mask_joint, const std::string& joints_csv, int flexion_channel,
             bool best_fixed, const std::string& out_dir) {
    ModelParameters params = load_checkpoint(checkpoint_path);
    EvalInputs in = load_eval_inputs(data_glob, mask_joint, joints_csv, flexion_channel, best_fixed);

    std::vector<EvalTrace> traces;
    for (const auto& seq : in.sequences)
        traces.push_back(sliding_infer(params, seq, in.masked_joint, in.eval));
    auto report = aggregate_traces(traces, in.eval);

    fs::create_directories(out_dir);
    write_text((fs::path(out_dir) / "report.tsv").string(), report_tsv(report));
    for (size_t i = 0; i < traces.size(); ++i) {
        std::string name = "trace_" + sanitize(traces[i].label) + "_" + std::to_string(i) + ".csv";
        write_text((fs::path(out_dir) / name).string(), trace_csv(traces[i]));
    }
    std::cout << report_tsv(report);
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& subsets_path,
               const std::string& out_override, std::optional<uint64_t> seed) {
    RunConfig rc = load_run_config(config_path);
    if (seed) rc.seed = *seed;
    if (!out_override.empty()) rc.out_dir = out_override;
    rc.train.seed = derive_seed(rc.seed, "train");

    LoadedData data = load_dataset(rc.data);
    TrainDataset dataset;
    dataset.train_sequences = std::move(data.train_sequences);
    dataset.validation_sequences = std::move(data.validation_sequences);
    dataset.masked_joint = data.masked_joint;
    dataset.eval = data.eval;
    if (dataset.train_sequences.empty()) throw std::invalid_argument("ablate: no training data");

    auto subsets = parse_subsets_file(subsets_path, dataset.train_sequences.front());

    fs::create_directories(rc.out_dir);
    auto rows = ablation_run(rc.model, rc.train, dataset, subsets,
                             [&](const std::string& label, const TrainResult& trained) {
                                 save_checkpoint((fs::path(rc.out_dir) /
                                                  ("ablation_" + sanitize(label) + ".ckpt"))
                                                     .string(),
                                                 trained.params, trained.meta);
                             });
    write_text((fs::path(rc.out_dir) / "ablation.tsv").string(), ablation_tsv(rows));
    std::cout << ablation_tsv(rows);
    return 0;
}

int cmd_attn(const std::string& checkpoint_path, const std::string& data_path,
             const std::string& masked_name, const std::string& joints_csv, int flexion_channel,
             int64_t profile_window, const std::string& out_dir) {
    ModelParameters params = load_checkpoint(checkpoint_path);
    EvalInputs in = load_eval_inputs(data_path, masked_name, joints_csv, flexion_channel, false);
    if (in.sequences.size() != 1)
        throw std::invalid_argument("attn expects exactly one sequence, got " +
                                    std::to_string(in.sequences.size()));
    const MotionSequence& seq = in.sequences.front();

    auto windows = make_windows(seq, params.config.frames, 1);
    if (profile_window < 0 || profile_window >= static_cast<int64_t>(windows.size()))
        throw std::invalid_argument("profile window out of range");
    PoseWindow window = mask_joint(windows[static_cast<size_t>(profile_window)], in.masked_joint);

    SynergyProfile profile =
        knee_query_profile(params, window, seq.joint_names, model_input_scale(seq.convention));
    GaitAttentionSeries series = gait_attention_series(params, seq, in.masked_joint, in.eval);

    fs::create_directories(out_dir);
    write_text((fs::path(out_dir) / "profile.csv").string(), profile_csv(profile));
    write_text((fs::path(out_dir) / "series.csv").string(), series_csv(series));
    std::cout << "wrote profile.csv (" << profile.weights.dim(0) << " layers) and series.csv ("
              << series.truth_deg.size() << " frames)\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"AEPM: probabilistic knee-angle estimation from whole-body joint angles"};
    app.require_subcommand(1);

    std::optional<uint64_t> seed;
    app.add_option("--seed", seed, "override the config seed")->capture_default_str();

    auto* synth = app.add_subcommand("synth", "generate a synthetic coupled-gait motion CSV");
    std::string synth_spec, synth_out = "motion.csv";
    synth->add_option("--spec", synth_spec, "synthesis spec JSON")->required();
    synth->add_option("--out", synth_out, "output CSV path");

    auto* train_cmd = app.add_subcommand("train", "train a model from a run config");
    std::string train_config, train_out;
    train_cmd->add_option("--config", train_config, "run config JSON")->required();
    train_cmd->add_option("--out", train_out, "output directory (overrides config)");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint with sliding windows");
    std::string eval_ckpt, eval_data, eval_mask, eval_joints, eval_out = "eval_out";
    int eval_flexion = 0;
    bool eval_best_fixed = false;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--data", eval_data, "motion CSV path or glob")->required();
    eval_cmd->add_option("--mask-joint", eval_mask, "masked joint name")->required();
    eval_cmd->add_option("--joints", eval_joints, "comma-separated joint subset");
    eval_cmd->add_option("--flexion-channel", eval_flexion, "euler flexion channel (0..2)");
    eval_cmd->add_flag("--best-fixed-index", eval_best_fixed,
                       "best RMSE over a fixed sample index instead of per-frame selection");
    eval_cmd->add_option("--out", eval_out, "output directory");

    auto* ablate_cmd = app.add_subcommand("ablate", "train and evaluate joint subsets");
    std::string ablate_config, ablate_subsets, ablate_out;
    ablate_cmd->add_option("--config", ablate_config, "run config JSON")->required();
    ablate_cmd->add_option("--subsets", ablate_subsets, "subset file: '<label>: j1,j2,...'")->required();
    ablate_cmd->add_option("--out", ablate_out, "output directory (overrides config)");

    auto* attn_cmd = app.add_subcommand("attn", "export knee-query attention analyses");
    std::string attn_ckpt, attn_data, attn_mask, attn_joints, attn_out = "attn_out";
    int attn_flexion = 0;
    int64_t attn_window = 0;
    attn_cmd->add_option("--checkpoint", attn_ckpt, "checkpoint file")->required();
    attn_cmd->add_option("--data", attn_data, "motion CSV path")->required();
    attn_cmd->add_option("--mask-joint", attn_mask, "masked joint name")->required();
    attn_cmd->add_option("--joints", attn_joints, "comma-separated joint subset");
    attn_cmd->add_option("--flexion-channel", attn_flexion, "euler flexion channel (0..2)");
    attn_cmd->add_option("--window", attn_window, "window start for the per-layer profile");
    attn_cmd->add_option("--out", attn_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(synth_spec, synth_out, seed);
        if (train_cmd->parsed()) return cmd_train(train_config, train_out, seed);
        if (eval_cmd->parsed())
            return cmd_eval(eval_ckpt, eval_data, eval_mask, eval_joints, eval_flexion,
                            eval_best_fixed, eval_out);
        if (ablate_cmd->parsed()) return cmd_ablate(ablate_config, ablate_subsets, ablate_out, seed);
        if (attn_cmd->parsed())
            return cmd_attn(attn_ckpt, attn_data, attn_mask, attn_joints, attn_flexion,
                            attn_window, attn_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << "error: no subcommand\n";
    return 1;
}
