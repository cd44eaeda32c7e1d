#include "aepm/run_config.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "aepm/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace aepm {

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json parse_json(const std::string& text, const std::string& origin) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(origin + ": " + e.what());
    }
}

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ParseError("config: " + where + " must be an object");
    for (const auto& item : j.items()) {
        if (allowed.find(item.key()) == allowed.end())
            throw ParseError("config: unknown key '" + item.key() + "' in " + where);
    }
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ParseError("config: bad value type for '" + key + "'");
    }
}

Tensor tensor_2d(const json& j, const std::string& key, int64_t rows, int64_t cols) {
    if (!j.at(key).is_array())
        throw ParseError("config: '" + key + "' must be a " + std::to_string(rows) + " x " +
                         std::to_string(cols) + " array");
    Tensor t({rows, cols});
    const auto& outer = j.at(key);
    if (static_cast<int64_t>(outer.size()) != rows)
        throw ParseError("config: '" + key + "' must have " + std::to_string(rows) + " rows");
    for (int64_t r = 0; r < rows; ++r) {
        const auto& row = outer.at(static_cast<size_t>(r));
        if (!row.is_array() || static_cast<int64_t>(row.size()) != cols)
            throw ParseError("config: '" + key + "' row " + std::to_string(r) + " must have " +
                             std::to_string(cols) + " entries");
        for (int64_t c = 0; c < cols; ++c) t.at(r, c) = row.at(static_cast<size_t>(c)).get<double>();
    }
    return t;
}

bool has_wildcard(const std::string& s) {
    return s.find('*') != std::string::npos || s.find('?') != std::string::npos;
}

bool wildcard_match(const char* pat, const char* str) {
    for (; *pat; ++pat) {
        if (*pat == '*') {
            while (*(pat + 1) == '*') ++pat;
            for (const char* s = str;; ++s) {
                if (wildcard_match(pat + 1, s)) return true;
                if (!*s) return false;
            }
        }
        if (!*str || (*pat != '?' && *pat != *str)) return false;
        ++str;
    }
    return !*str;
}

std::vector<std::string> expand_paths(const std::vector<std::string>& patterns,
                                      const std::string& which) {
    std::vector<std::string> out;
    for (const auto& p : patterns) {
        auto matches = expand_glob(p);
        if (matches.empty())
            throw std::invalid_argument("config: " + which + " pattern '" + p +
                                        "' matches no files");
        out.insert(out.end(), matches.begin(), matches.end());
    }
    return out;
}

} // namespace

std::vector<std::string> expand_glob(const std::string& pattern) {
    if (!has_wildcard(pattern)) {
        return fs::exists(pattern) ? std::vector<std::string>{pattern} : std::vector<std::string>{};
    }
    fs::path pat(pattern);
    fs::path dir = pat.parent_path();
    if (dir.empty()) dir = ".";
    std::string leaf = pat.filename().string();
    std::vector<std::string> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string name = entry.path().filename().string();
        if (wildcard_match(leaf.c_str(), name.c_str())) out.push_back(entry.path().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

RunConfig run_config_from_text(const std::string& text, const std::string& origin) {
    json j = parse_json(text, origin);
    check_keys(j, "top level", {"model", "train", "data", "out_dir", "seed", "resume_from"});
    RunConfig rc;

    if (!j.contains("model")) throw ParseError("config: missing 'model' section");
    const json& jm = j.at("model");
    check_keys(jm, "model", {"n_joints", "window_frames", "embed_dim", "layer_pairs", "samples",
                             "heads", "mlp_hidden", "pre_norm", "squared_norm_loss"});
    rc.model.joints = get_or(jm, "n_joints", rc.model.joints);
    rc.model.frames = get_or(jm, "window_frames", rc.model.frames);
    rc.model.embed_dim = get_or(jm, "embed_dim", rc.model.embed_dim);
    rc.model.layer_pairs = get_or(jm, "layer_pairs", rc.model.layer_pairs);
    rc.model.samples = get_or(jm, "samples", rc.model.samples);
    rc.model.heads = get_or(jm, "heads", rc.model.heads);
    rc.model.mlp_hidden = get_or(jm, "mlp_hidden", rc.model.mlp_hidden);
    rc.model.pre_norm = get_or(jm, "pre_norm", rc.model.pre_norm);
    rc.model.squared_norm_loss = get_or(jm, "squared_norm_loss", rc.model.squared_norm_loss);
    rc.model.validate();

    const json jt = j.contains("train") ? j.at("train") : json::object();
    check_keys(jt, "train", {"learning_rate", "batch_size", "weight_decay", "max_epochs",
                             "stage_shift_epoch", "patience", "window_stride"});
    rc.train.learning_rate = get_or(jt, "learning_rate", rc.train.learning_rate);
    rc.train.batch_size = get_or(jt, "batch_size", rc.train.batch_size);
    rc.train.weight_decay = get_or(jt, "weight_decay", rc.train.weight_decay);
    rc.train.max_epochs = get_or(jt, "max_epochs", rc.train.max_epochs);
    rc.train.stage_shift_epoch = get_or(jt, "stage_shift_epoch", rc.train.stage_shift_epoch);
    rc.train.patience = get_or(jt, "patience", rc.train.patience);
    rc.train.window_stride = get_or(jt, "window_stride", rc.train.window_stride);
    rc.train.validate();

    if (!j.contains("data")) throw ParseError("config: missing 'data' section");
    const json& jd = j.at("data");
    check_keys(jd, "data", {"train_paths", "validation_paths", "masked_joint", "joint_subset",
                            "flexion_channel", "best_fixed_sample"});
    rc.data.train_paths = expand_paths(
        get_or(jd, "train_paths", std::vector<std::string>{}), "train_paths");
    rc.data.validation_paths = expand_paths(
        get_or(jd, "validation_paths", std::vector<std::string>{}), "validation_paths");
    rc.data.masked_joint = get_or(jd, "masked_joint", std::string{});
    if (rc.data.masked_joint.empty()) throw ParseError("config: data.masked_joint is required");
    rc.data.joint_subset = get_or(jd, "joint_subset", std::vector<std::string>{});
    rc.data.flexion_channel = get_or(jd, "flexion_channel", 0);
    rc.data.best_fixed_sample = get_or(jd, "best_fixed_sample", false);
    if (!rc.data.joint_subset.empty()) {
        if (std::find(rc.data.joint_subset.begin(), rc.data.joint_subset.end(),
                      rc.data.masked_joint) == rc.data.joint_subset.end())
            throw ParseError("config: masked joint '" + rc.data.masked_joint +
                             "' is not in joint_subset");
    }

    rc.out_dir = get_or(j, "out_dir", rc.out_dir);
    rc.seed = get_or(j, "seed", rc.seed);
    rc.resume_from = get_or(j, "resume_from", std::string{});
    if (!rc.resume_from.empty() && !fs::exists(rc.resume_from))
        throw std::invalid_argument("config: resume_from '" + rc.resume_from + "' does not exist");
    return rc;
}

RunConfig load_run_config(const std::string& path) {
    return run_config_from_text(read_file(path), path);
}

SynthGaitSpec synth_spec_from_text(const std::string& text, const std::string& origin) {
    json j = parse_json(text, origin);
    if (j.contains("preset")) {
        check_keys(j, "top level", {"preset"});
        const json& p = j.at("preset");
        check_keys(p, "preset",
                   {"n_joints", "knee_index", "coupled_joints", "subject", "seed",
                    "duration_frames", "noise_std_deg", "scenario_label"});
        const int n = get_or(p, "n_joints", 8);
        const int knee = get_or(p, "knee_index", 2);
        std::vector<int> coupled = get_or(p, "coupled_joints", std::vector<int>{});
        if (coupled.empty()) {
            for (int jj = 0; jj < n; ++jj)
                if (jj != knee) coupled.push_back(jj);
        }
        SynthGaitSpec spec = synthetic_subject_spec(
            n, knee, coupled, get_or(p, "subject", 0), get_or(p, "seed", uint64_t{1}),
            get_or(p, "duration_frames", int64_t{240}), get_or(p, "noise_std_deg", 0.0));
        if (p.contains("scenario_label")) spec.scenario_label = p.at("scenario_label").get<std::string>();
        return spec;
    }

    check_keys(j, "top level",
               {"n_joints", "knee_index", "frame_rate", "base_frequency_hz", "duration_frames",
                "noise_std_deg", "seed", "amplitude", "phase", "coupling", "joint_names",
                "scenario_label"});
    SynthGaitSpec spec;
    spec.n_joints = get_or(j, "n_joints", spec.n_joints);
    spec.knee_index = get_or(j, "knee_index", spec.knee_index);
    spec.frame_rate = get_or(j, "frame_rate", spec.frame_rate);
    spec.base_frequency_hz = get_or(j, "base_frequency_hz", spec.base_frequency_hz);
    spec.duration_frames = get_or(j, "duration_frames", spec.duration_frames);
    spec.noise_std_deg = get_or(j, "noise_std_deg", spec.noise_std_deg);
    spec.seed = get_or(j, "seed", spec.seed);
    spec.scenario_label = get_or(j, "scenario_label", spec.scenario_label);
    spec.joint_names = get_or(j, "joint_names", std::vector<std::string>{});
    if (j.contains("amplitude")) spec.amplitude = tensor_2d(j, "amplitude", spec.n_joints, 3);
    if (j.contains("phase")) spec.phase = tensor_2d(j, "phase", spec.n_joints, 3);
    if (j.contains("coupling")) spec.coupling = tensor_2d(j, "coupling", 3, 3 * spec.n_joints);
    // Fill anything still missing from the deterministic subject generator.
    if (spec.amplitude.empty() || spec.phase.empty() || spec.coupling.empty()) {
        std::vector<int> coupled;
        for (int jj = 0; jj < spec.n_joints; ++jj)
            if (jj != spec.knee_index) coupled.push_back(jj);
        SynthGaitSpec fill = synthetic_subject_spec(spec.n_joints, spec.knee_index, coupled, 0,
                                                    spec.seed, spec.duration_frames,
                                                    spec.noise_std_deg);
        if (spec.amplitude.empty()) spec.amplitude = fill.amplitude;
        if (spec.phase.empty()) spec.phase = fill.phase;
        if (spec.coupling.empty()) spec.coupling = fill.coupling;
    }
    spec.validate();
    return spec;
}

SynthGaitSpec load_synth_spec(const std::string& path) {
    return synth_spec_from_text(read_file(path), path);
}

LoadedData load_dataset(const DataConfig& data) {
    LoadedData out;
    out.eval.flexion_channel = data.flexion_channel;
    out.eval.best_fixed_sample = data.best_fixed_sample;

    auto load_group = [&](const std::vector<std::string>& paths) {
        std::vector<MotionSequence> seqs;
        for (const auto& p : paths) {
            MotionSequence seq = parse_motion_csv(p);
            std::vector<int> subset;
            if (data.joint_subset.empty()) {
                subset = default_joint_indices(seq);
            } else {
                for (const auto& name : data.joint_subset) {
                    int idx = seq.joint_index(name);
                    if (idx < 0)
                        throw std::invalid_argument("dataset: joint '" + name + "' not found in '" +
                                                    p + "'");
                    subset.push_back(idx);
                }
            }
            seqs.push_back(select_joints(seq, subset));
        }
        return seqs;
    };

    out.train_sequences = load_group(data.train_paths);
    out.validation_sequences = load_group(data.validation_paths);

    const auto& reference = !out.train_sequences.empty() ? out.train_sequences : out.validation_sequences;
    if (reference.empty()) throw std::invalid_argument("dataset: no sequences loaded");
    int masked = reference.front().joint_index(data.masked_joint);
    if (masked < 0)
        throw std::invalid_argument("dataset: masked joint '" + data.masked_joint +
                                    "' not present after joint selection");
    for (const auto& seq : out.train_sequences)
        if (seq.joint_index(data.masked_joint) != masked)
            throw std::invalid_argument("dataset: inconsistent joint ordering across sequences");
    for (const auto& seq : out.validation_sequences)
        if (seq.joint_index(data.masked_joint) != masked)
            throw std::invalid_argument("dataset: inconsistent joint ordering across sequences");
    out.masked_joint = masked;
    return out;
}

} // namespace aepm
