#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "aepm/tensor.hpp"

namespace aepm {

/// Angle convention of a motion sequence. euler-xyz channels are degrees;
/// exponential-map channels are radians-scaled axis-angle vectors.
enum class Convention { exponential_map, euler_xyz };

std::string to_string(Convention c);
Convention convention_from_string(const std::string& tag); // throws ParseError

/// The network consumes radians-scale values for both conventions:
/// euler-xyz degrees are multiplied by pi/180 at the model boundary (and
/// predictions scaled back); exponential-map channels pass through.
double model_input_scale(Convention c);

/// A timestamped sequence of full-body joint-angle frames.
/// frames is T x n x 3; joint index 0 is reserved for whole-body rotation
/// when present.
struct MotionSequence {
    double frame_rate = 0.0;
    std::vector<std::string> joint_names;
    Convention convention = Convention::euler_xyz;
    Tensor frames; // {T, n, 3}
    std::string scenario_label;

    int64_t num_frames() const { return frames.empty() ? 0 : frames.dim(0); }
    int num_joints() const { return static_cast<int>(joint_names.size()); }
    int joint_index(const std::string& name) const; // -1 if absent
    void validate() const;                          // throws on broken invariants
};

/// An l-frame slice carrying both the ground truth x and the masked input
/// x_bar. masked_joint is -1 until mask_joint has been applied.
struct PoseWindow {
    Tensor x;     // {l, n, 3}
    Tensor x_bar; // {l, n, 3}
    int masked_joint = -1;
    std::string source_id;
    int64_t start_frame = 0;
};

/// Synthetic coupled-gait generator spec. Every non-knee joint channel is a
/// sinusoid; the knee is a fixed linear function of the other joints'
/// channels plus Gaussian noise, which gives the evaluation an exact noise
/// floor.
struct SynthGaitSpec {
    int n_joints = 8;
    int knee_index = 2;
    double frame_rate = 60.0;
    double base_frequency_hz = 1.0;
    int64_t duration_frames = 240;
    double noise_std_deg = 0.0;
    uint64_t seed = 1;
    Tensor amplitude; // {n, 3} degrees
    Tensor phase;     // {n, 3} radians
    Tensor coupling;  // {3, 3n}; columns of the knee joint must be zero
    std::vector<std::string> joint_names; // optional; defaults joint0..jointN-1
    std::string scenario_label = "synthetic";

    void validate() const;
};

/// Deterministic per-subject spec: all subjects share the coupling map
/// (drawn from `seed` and `coupled_joints` only) while amplitudes, phases
/// and cadence vary with `subject`. Joints outside `coupled_joints` (and
/// the knee itself) contribute nothing to the knee signal.
SynthGaitSpec synthetic_subject_spec(int n_joints, int knee_index,
                                     const std::vector<int>& coupled_joints,
                                     int subject, uint64_t seed,
                                     int64_t duration_frames, double noise_std_deg);

/// A subject's trial set: one spec per trial, each with its own cadence and
/// phase style but the same coupling (one body, several recordings). All
/// trials carry the scenario label "subject<subject>".
std::vector<SynthGaitSpec> synthetic_subject_trial_specs(
    int n_joints, int knee_index, const std::vector<int>& coupled_joints, int subject,
    int trials, uint64_t seed, int64_t duration_frames, double noise_std_deg);

MotionSequence parse_motion_csv(const std::string& path);
MotionSequence parse_motion_csv_text(const std::string& text, const std::string& origin = "<string>");
void write_motion_csv(const MotionSequence& seq, const std::string& path);
std::string motion_csv_text(const MotionSequence& seq);

MotionSequence downsample(const MotionSequence& seq, int64_t factor);
MotionSequence select_joints(const MotionSequence& seq, const std::vector<int>& indices);

/// All joints except ones named "translation" (reserved pseudo-joint name
/// for whole-body translation channels, which are not model input).
std::vector<int> default_joint_indices(const MotionSequence& seq);

std::vector<PoseWindow> make_windows(const MotionSequence& seq, int64_t l, int64_t stride);
PoseWindow mask_joint(const PoseWindow& window, int k);

MotionSequence synth_gait(const SynthGaitSpec& spec);

} // namespace aepm
