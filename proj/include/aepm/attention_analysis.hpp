#pragma once

#include <string>
#include <vector>

#include "aepm/evaluate.hpp"
#include "aepm/model.hpp"
#include "aepm/motion.hpp"

namespace aepm {

/// Knee-query spatial attention rows, one probability vector over the
/// joints per spatial layer, averaged over heads and over the window's
/// frames.
struct SynergyProfile {
    std::vector<std::string> joint_names;
    int masked_joint = 0;
    Tensor weights; // {M, n}, each row sums to 1
};

/// First-layer knee-query row tracked across a sliding-window pass,
/// paired with ground-truth and predicted knee degrees for plotting.
struct GaitAttentionSeries {
    std::vector<std::string> joint_names;
    int masked_joint = 0;
    int64_t first_frame = 0;
    std::vector<double> truth_deg;
    std::vector<double> pred_deg;
    Tensor weights; // {frames, n}, each row sums to 1
};

/// `input_scale` maps the window into model units (see model_input_scale);
/// pass the owning sequence's scale when the window holds raw channel values.
SynergyProfile knee_query_profile(const ModelParameters& params, const PoseWindow& window,
                                  const std::vector<std::string>& joint_names = {},
                                  double input_scale = 1.0);

GaitAttentionSeries gait_attention_series(const ModelParameters& params,
                                          const MotionSequence& seq, int k,
                                          const EvalOptions& opts = {});

/// CSV export `layer,joint_name,weight`.
std::string profile_csv(const SynergyProfile& profile);
/// CSV export `frame,truth_deg,pred_deg,w_joint0..w_jointn-1`.
std::string series_csv(const GaitAttentionSeries& series);

} // namespace aepm
