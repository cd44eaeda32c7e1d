#pragma once

#include <string>
#include <vector>

#include "aepm/model.hpp"
#include "aepm/motion.hpp"
#include "aepm/train.hpp"

namespace aepm {

struct DataConfig {
    std::vector<std::string> train_paths;      // expanded from literals/globs
    std::vector<std::string> validation_paths; // expanded from literals/globs
    std::string masked_joint;                  // joint name
    std::vector<std::string> joint_subset;     // names; empty = all except "translation"
    int flexion_channel = 0;
    bool best_fixed_sample = false;
};

/// One JSON document drives every experiment. All randomness flows from
/// `seed` through named sub-seeds (data, init, training).
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
    std::string out_dir = "out";
    uint64_t seed = 0;
    std::string resume_from;
};

RunConfig load_run_config(const std::string& path);
RunConfig run_config_from_text(const std::string& text, const std::string& origin = "<string>");

SynthGaitSpec load_synth_spec(const std::string& path);
SynthGaitSpec synth_spec_from_text(const std::string& text, const std::string& origin = "<string>");

/// Expand a path or shell-style glob (* and ?) into existing files, sorted.
std::vector<std::string> expand_glob(const std::string& pattern);

/// Load sequences, apply the config's joint subset and resolve the masked
/// joint name to an index common to all sequences.
struct LoadedData {
    std::vector<MotionSequence> train_sequences;
    std::vector<MotionSequence> validation_sequences;
    int masked_joint = 0;
    EvalOptions eval;
};
LoadedData load_dataset(const DataConfig& data);

} // namespace aepm
