#include "aepm/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "aepm/errors.hpp"
#include "aepm/parallel.hpp"

namespace aepm {

double knee_angle_deg(const std::array<double, 3>& v, Convention convention, int flexion_channel) {
    if (convention == Convention::euler_xyz) {
        if (flexion_channel < 0 || flexion_channel > 2)
            throw std::invalid_argument("knee_angle_deg: flexion channel must be 0..2");
        return v[static_cast<size_t>(flexion_channel)];
    }
    double mag = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    return mag * 180.0 / M_PI;
}

double sigma_deg(double sigma, Convention convention) {
    return convention == Convention::euler_xyz ? sigma : sigma * 180.0 / M_PI;
}

EvalTrace sliding_infer(const ModelParameters& params, const MotionSequence& seq, int k,
                        const EvalOptions& opts) {
    seq.validate();
    const ModelConfig& cfg = params.config;
    const int64_t T = seq.num_frames();
    const int64_t l = cfg.frames;
    const int n = seq.num_joints();
    if (n != cfg.joints)
        throw ShapeError("sliding_infer: sequence has " + std::to_string(n) +
                         " joints, model expects " + std::to_string(cfg.joints));
    if (k < 0 || k >= n) throw std::invalid_argument("sliding_infer: masked joint out of range");
    if (T < l)
        throw std::invalid_argument("sliding_infer: sequence too short (" + std::to_string(T) +
                                    " frames, window " + std::to_string(l) + ")");

    const int64_t windows = T - l + 1;
    EvalTrace trace;
    trace.convention = seq.convention;
    trace.flexion_channel = opts.flexion_channel;
    trace.label = seq.scenario_label;
    trace.first_frame = l - 1;
    trace.frames.resize(static_cast<size_t>(windows));

    const double scale = model_input_scale(seq.convention);
    const double inv_scale = 1.0 / scale;
    const int64_t chunk = 32;
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
        PredictionSet pred = forward(x_bar, params);
        const int64_t nsamp = cfg.samples;
        for (int64_t w = 0; w < b; ++w) {
            EvalFrame& fr = trace.frames[static_cast<size_t>(begin + w)];
            const int64_t tok = (w * l + (l - 1)) * n + k;
            const double* truth = seq.frames.data() + ((begin + w + l - 1) * n + k) * 3;
            for (int c = 0; c < 3; ++c) {
                fr.truth[static_cast<size_t>(c)] = truth[c];
                fr.mu[static_cast<size_t>(c)] = pred.mu[tok * 3 + c] * inv_scale;
            }
            fr.sigma = pred.sigma[tok] * inv_scale;
            fr.samples.resize(static_cast<size_t>(nsamp));
            for (int64_t i = 0; i < nsamp; ++i)
                for (int c = 0; c < 3; ++c)
                    fr.samples[static_cast<size_t>(i)][static_cast<size_t>(c)] =
                        pred.predictions[(tok * nsamp + i) * 3 + c] * inv_scale;
        }
    });
    return trace;
}

namespace {

double frame_truth_deg(const EvalTrace& tr, const EvalFrame& fr) {
    return knee_angle_deg(fr.truth, tr.convention, tr.flexion_channel);
}

double frame_mean_deg(const EvalTrace& tr, const EvalFrame& fr) {
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    for (const auto& s : fr.samples)
        for (int c = 0; c < 3; ++c) mean[static_cast<size_t>(c)] += s[static_cast<size_t>(c)];
    for (int c = 0; c < 3; ++c) mean[static_cast<size_t>(c)] /= static_cast<double>(fr.samples.size());
    return knee_angle_deg(mean, tr.convention, tr.flexion_channel);
}

// Accumulated squared errors for one label group; keeps everything needed
// for the frame-weighted average row to be an exact pooled identity.
//
// Mean RMSE is the mean over the N predictions of each prediction's RMSE;
// best RMSE keeps the per-frame oracle-selected sample (or, behind the
// flag, the single best sample index). Per-frame min <= any per-sample
// RMSE <= their mean, so best <= mean holds for every trace.
struct MetricAccum {
    int64_t frames = 0;
    double best_per_frame_sq = 0.0;    // sum over frames of min_i err_i^2
    std::vector<double> per_sample_sq; // sum over frames of err_i^2, per i
    double sigma_sum = 0.0;

    void add(const EvalTrace& tr) {
        for (const auto& fr : tr.frames) {
            const double truth = frame_truth_deg(tr, fr);
            if (per_sample_sq.empty()) per_sample_sq.assign(fr.samples.size(), 0.0);
            if (per_sample_sq.size() != fr.samples.size())
                throw std::invalid_argument("scenario_report: inconsistent sample counts");
            double best = 0.0;
            for (size_t i = 0; i < fr.samples.size(); ++i) {
                double err = knee_angle_deg(fr.samples[i], tr.convention, tr.flexion_channel) - truth;
                per_sample_sq[i] += err * err;
                double sq = err * err;
                if (i == 0 || sq < best) best = sq;
            }
            best_per_frame_sq += best;
            sigma_sum += sigma_deg(fr.sigma, tr.convention);
            ++frames;
        }
    }

    void merge(const MetricAccum& o) {
        frames += o.frames;
        best_per_frame_sq += o.best_per_frame_sq;
        if (per_sample_sq.empty()) per_sample_sq = o.per_sample_sq;
        else
            for (size_t i = 0; i < per_sample_sq.size() && i < o.per_sample_sq.size(); ++i)
                per_sample_sq[i] += o.per_sample_sq[i];
        sigma_sum += o.sigma_sum;
    }

    ScenarioReport report(const std::string& label, bool best_fixed_sample) const {
        if (frames == 0) throw std::invalid_argument("scenario_report: empty group '" + label + "'");
        ScenarioReport r;
        r.label = label;
        r.frames = frames;
        double mean_of_rmse = 0.0;
        for (double sq : per_sample_sq) mean_of_rmse += std::sqrt(sq / static_cast<double>(frames));
        r.mean_rmse_deg = per_sample_sq.empty()
                              ? 0.0
                              : mean_of_rmse / static_cast<double>(per_sample_sq.size());
        double best_sq = best_per_frame_sq;
        if (best_fixed_sample) {
            best_sq = per_sample_sq.empty() ? 0.0 : *std::min_element(per_sample_sq.begin(), per_sample_sq.end());
        }
        r.best_rmse_deg = std::sqrt(best_sq / static_cast<double>(frames));
        r.mean_sigma_deg = sigma_sum / static_cast<double>(frames);
        return r;
    }
};

std::string format_g9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

} // namespace

double rmse_mean(const EvalTrace& trace) {
    if (trace.frames.empty()) throw std::invalid_argument("rmse_mean: empty trace");
    MetricAccum acc;
    acc.add(trace);
    return acc.report(trace.label, false).mean_rmse_deg;
}

double rmse_best(const EvalTrace& trace, bool best_fixed_sample) {
    if (trace.frames.empty()) throw std::invalid_argument("rmse_best: empty trace");
    MetricAccum acc;
    acc.add(trace);
    return acc.report(trace.label, best_fixed_sample).best_rmse_deg;
}

double mean_sigma_deg(const EvalTrace& trace) {
    if (trace.frames.empty()) throw std::invalid_argument("mean_sigma_deg: empty trace");
    MetricAccum acc;
    acc.add(trace);
    return acc.sigma_sum / static_cast<double>(acc.frames);
}

std::vector<ScenarioReport> aggregate_traces(const std::vector<EvalTrace>& traces,
                                             const EvalOptions& opts) {
    if (traces.empty()) throw std::invalid_argument("scenario_report: no traces");
    std::map<std::string, MetricAccum> groups;
    std::vector<std::string> order;
    for (const auto& tr : traces) {
        if (groups.find(tr.label) == groups.end()) order.push_back(tr.label);
        groups[tr.label].add(tr);
    }
    std::vector<ScenarioReport> out;
    MetricAccum all;
    for (const auto& label : order) {
        const MetricAccum& acc = groups[label];
        out.push_back(acc.report(label, opts.best_fixed_sample));
        all.merge(acc);
    }
    out.push_back(all.report("average", opts.best_fixed_sample));
    return out;
}

std::vector<ScenarioReport> scenario_report(const ModelParameters& params,
                                            const std::vector<MotionSequence>& sequences, int k,
                                            const EvalOptions& opts) {
    if (sequences.empty()) throw std::invalid_argument("scenario_report: no sequences");
    std::vector<EvalTrace> traces;
    traces.reserve(sequences.size());
    for (const auto& seq : sequences) traces.push_back(sliding_infer(params, seq, k, opts));
    return aggregate_traces(traces, opts);
}

std::string report_tsv(const std::vector<ScenarioReport>& report) {
    std::string out = "scenario\tframes\tmean_rmse_deg\tbest_rmse_deg\tmean_sigma_deg\n";
    for (const auto& r : report) {
        out += r.label + "\t" + std::to_string(r.frames) + "\t" + format_g9(r.mean_rmse_deg) +
               "\t" + format_g9(r.best_rmse_deg) + "\t" + format_g9(r.mean_sigma_deg) + "\n";
    }
    return out;
}

std::string trace_csv(const EvalTrace& trace) {
    const size_t nsamp = trace.frames.empty() ? 0 : trace.frames[0].samples.size();
    std::string out = "frame,truth_deg,mean_deg,sigma_deg";
    for (size_t i = 0; i < nsamp; ++i) out += ",sample" + std::to_string(i) + "_deg";
    out += "\n";
    for (size_t w = 0; w < trace.frames.size(); ++w) {
        const EvalFrame& fr = trace.frames[w];
        out += std::to_string(trace.first_frame + static_cast<int64_t>(w));
        out += "," + format_g9(frame_truth_deg(trace, fr));
        out += "," + format_g9(frame_mean_deg(trace, fr));
        out += "," + format_g9(sigma_deg(fr.sigma, trace.convention));
        for (size_t i = 0; i < fr.samples.size(); ++i)
            out += "," + format_g9(knee_angle_deg(fr.samples[i], trace.convention, trace.flexion_channel));
        out += "\n";
    }
    return out;
}

} // namespace aepm
