#include "aepm/attention_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "aepm/errors.hpp"
#include "aepm/parallel.hpp"

namespace aepm {

namespace {

std::string format_g9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

} // namespace

SynergyProfile knee_query_profile(const ModelParameters& params, const PoseWindow& window,
                                  const std::vector<std::string>& joint_names,
                                  double input_scale) {
    const ModelConfig& cfg = params.config;
    if (window.masked_joint < 0)
        throw std::invalid_argument("knee_query_profile: window has no masked joint");
    const int k = window.masked_joint;
    const int64_t l = cfg.frames, n = cfg.joints;
    if (window.x_bar.rank() != 3 || window.x_bar.dim(0) != l || window.x_bar.dim(1) != n)
        throw ShapeError("knee_query_profile: window shape " + window.x_bar.shape_str() +
                         " does not match model " + std::to_string(l) + " x " + std::to_string(n) + " x 3");

    Tensor x_bar({1, l, n, 3});
    for (int64_t i = 0; i < l * n * 3; ++i) x_bar[i] = window.x_bar[i] * input_scale;
    AttentionRecord record;
    forward(x_bar, params, Capture::spatial, &record);

    SynergyProfile profile;
    profile.masked_joint = k;
    profile.joint_names = joint_names;
    if (profile.joint_names.empty())
        for (int64_t j = 0; j < n; ++j) profile.joint_names.push_back("joint" + std::to_string(j));
    profile.weights.resize({static_cast<int64_t>(record.spatial.size()), n});
    profile.weights.zero();

    const int heads = cfg.heads;
    for (size_t m = 0; m < record.spatial.size(); ++m) {
        const Tensor& w = record.spatial[m]; // {heads, l, n, n} for b = 1
        double* out = profile.weights.data() + static_cast<int64_t>(m) * n;
        for (int h = 0; h < heads; ++h)
            for (int64_t g = 0; g < l; ++g) {
                const double* row = w.data() + (((static_cast<int64_t>(h) * l) + g) * n + k) * n;
                for (int64_t j = 0; j < n; ++j) out[j] += row[j];
            }
        const double scale = 1.0 / (static_cast<double>(heads) * static_cast<double>(l));
        for (int64_t j = 0; j < n; ++j) out[j] *= scale;
    }
    return profile;
}

GaitAttentionSeries gait_attention_series(const ModelParameters& params, const MotionSequence& seq,
                                          int k, const EvalOptions& opts) {
    seq.validate();
    const ModelConfig& cfg = params.config;
    const int64_t T = seq.num_frames();
    const int64_t l = cfg.frames;
    const int n = seq.num_joints();
    if (n != cfg.joints)
        throw ShapeError("gait_attention_series: sequence has " + std::to_string(n) +
                         " joints, model expects " + std::to_string(cfg.joints));
    if (k < 0 || k >= n)
        throw std::invalid_argument("gait_attention_series: masked joint out of range");
    if (T < l)
        throw std::invalid_argument("gait_attention_series: sequence too short (" +
                                    std::to_string(T) + " frames, window " + std::to_string(l) + ")");

    const int64_t windows = T - l + 1;
    GaitAttentionSeries series;
    series.masked_joint = k;
    series.joint_names = seq.joint_names;
    series.first_frame = l - 1;
    series.truth_deg.resize(static_cast<size_t>(windows));
    series.pred_deg.resize(static_cast<size_t>(windows));
    series.weights.resize({windows, n});

    const int heads = cfg.heads;
    const double scale = model_input_scale(seq.convention);
    const double inv_scale = 1.0 / scale;
    const int64_t chunk = 16;
    const int64_t chunks = (windows + chunk - 1) / chunk;
    parallel_for(chunks, [&](int64_t ci) {
        const int64_t begin = ci * chunk;
        const int64_t end = std::min(begin + chunk, windows);
        const int64_t b = end - begin;
        Tensor x_bar({b, l, n, 3});
        for (int64_t w = 0; w < b; ++w) {
            const double* src = seq.frames.data() + (begin + w) * n * 3;
            double* dst = x_bar.data() + w * l * n * 3;
            for (int64_t i = 0; i < l * n * 3; ++i) dst[i] = src[i] * scale;
            for (int64_t t = 0; t < l; ++t) {
                double* row = x_bar.data() + ((w * l + t) * n + k) * 3;
                row[0] = row[1] = row[2] = 0.0;
            }
        }
        AttentionRecord record;
        PredictionSet pred = forward(x_bar, params, Capture::spatial, &record);
        const Tensor& first = record.spatial.front(); // {heads, b*l, n, n}
        const int64_t nsamp = cfg.samples;
        for (int64_t w = 0; w < b; ++w) {
            // last-frame token group of this window, knee query row
            double* out = series.weights.data() + (begin + w) * n;
            std::fill(out, out + n, 0.0);
            const int64_t g = w * l + (l - 1);
            for (int h = 0; h < heads; ++h) {
                const double* row = first.data() + (((static_cast<int64_t>(h) * b * l) + g) * n + k) * n;
                for (int64_t j = 0; j < n; ++j) out[j] += row[j];
            }
            for (int64_t j = 0; j < n; ++j) out[j] /= static_cast<double>(heads);

            const double* truth = seq.frames.data() + ((begin + w + l - 1) * n + k) * 3;
            std::array<double, 3> tv{truth[0], truth[1], truth[2]};
            series.truth_deg[static_cast<size_t>(begin + w)] =
                knee_angle_deg(tv, seq.convention, opts.flexion_channel);

            const int64_t tok = (w * l + (l - 1)) * n + k;
            std::array<double, 3> mean{0.0, 0.0, 0.0};
            for (int64_t i = 0; i < nsamp; ++i)
                for (int c = 0; c < 3; ++c)
                    mean[static_cast<size_t>(c)] +=
                        pred.predictions[(tok * nsamp + i) * 3 + c] * inv_scale;
            for (int c = 0; c < 3; ++c) mean[static_cast<size_t>(c)] /= static_cast<double>(nsamp);
            series.pred_deg[static_cast<size_t>(begin + w)] =
                knee_angle_deg(mean, seq.convention, opts.flexion_channel);
        }
    });
    return series;
}

std::string profile_csv(const SynergyProfile& profile) {
    std::string out = "layer,joint_name,weight\n";
    const int64_t layers = profile.weights.dim(0);
    const int64_t n = profile.weights.dim(1);
    for (int64_t m = 0; m < layers; ++m)
        for (int64_t j = 0; j < n; ++j)
            out += std::to_string(m) + "," + profile.joint_names[static_cast<size_t>(j)] + "," +
                   format_g9(profile.weights.at(m, j)) + "\n";
    return out;
}

std::string series_csv(const GaitAttentionSeries& series) {
    const int64_t n = series.weights.dim(1);
    std::string out = "frame,truth_deg,pred_deg";
    for (int64_t j = 0; j < n; ++j) out += ",w_joint" + std::to_string(j);
    out += "\n";
    for (size_t w = 0; w < series.truth_deg.size(); ++w) {
        out += std::to_string(series.first_frame + static_cast<int64_t>(w));
        out += "," + format_g9(series.truth_deg[w]);
        out += "," + format_g9(series.pred_deg[w]);
        for (int64_t j = 0; j < n; ++j)
            out += "," + format_g9(series.weights.at(static_cast<int64_t>(w), j));
        out += "\n";
    }
    return out;
}

} // namespace aepm
