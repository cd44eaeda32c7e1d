#include "aepm/motion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "aepm/errors.hpp"
#include "aepm/rng.hpp"

namespace aepm {

bool Tensor::all_finite() const {
    for (int64_t i = 0; i < size(); ++i) {
        if (!std::isfinite((*this)[i])) return false;
    }
    return true;
}

std::string to_string(Convention c) {
    return c == Convention::exponential_map ? "exponential-map" : "euler-xyz";
}

Convention convention_from_string(const std::string& tag) {
    if (tag == "exponential-map") return Convention::exponential_map;
    if (tag == "euler-xyz") return Convention::euler_xyz;
    throw ParseError("unknown convention '" + tag + "'");
}

double model_input_scale(Convention c) {
    return c == Convention::euler_xyz ? M_PI / 180.0 : 1.0;
}

int MotionSequence::joint_index(const std::string& name) const {
    for (size_t i = 0; i < joint_names.size(); ++i) {
        if (joint_names[i] == name) return static_cast<int>(i);
    }
    return -1;
}

void MotionSequence::validate() const {
    if (frame_rate <= 0.0 || !std::isfinite(frame_rate))
        throw std::invalid_argument("MotionSequence: frame_rate must be positive");
    if (joint_names.empty()) throw std::invalid_argument("MotionSequence: no joints");
    if (frames.rank() != 3 || frames.dim(1) != num_joints() || frames.dim(2) != 3)
        throw ShapeError("MotionSequence: frames must be T x " +
                         std::to_string(num_joints()) + " x 3, got " + frames.shape_str());
    if (!frames.all_finite()) throw NumericError("MotionSequence: non-finite frame value");
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_number(const std::string& tok, const std::string& where) {
    size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(tok, &pos);
    } catch (const std::exception&) {
        throw ParseError(where + ": non-numeric value '" + tok + "'");
    }
    if (pos != tok.size()) throw ParseError(where + ": non-numeric value '" + tok + "'");
    return v;
}

std::string format_g9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

} // namespace

MotionSequence parse_motion_csv_text(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    MotionSequence seq;

    auto next_line = [&](int lineno) -> std::string {
        if (!std::getline(in, line))
            throw ParseError(origin + ": line " + std::to_string(lineno) + ": unexpected end of file");
        return line;
    };

    // line 1: rate,<fps>
    {
        auto fields = split_csv(next_line(1));
        if (fields.size() != 2 || fields[0] != "rate")
            throw ParseError(origin + ": line 1: malformed header, expected 'rate,<fps>'");
        seq.frame_rate = parse_number(fields[1], origin + ": line 1");
        if (seq.frame_rate <= 0.0)
            throw ParseError(origin + ": line 1: frame rate must be positive");
    }
    // line 2: convention,<tag>
    {
        auto fields = split_csv(next_line(2));
        if (fields.size() != 2 || fields[0] != "convention")
            throw ParseError(origin + ": line 2: malformed header, expected 'convention,<tag>'");
        try {
            seq.convention = convention_from_string(fields[1]);
        } catch (const ParseError& e) {
            throw ParseError(origin + ": line 2: " + e.what());
        }
    }
    // line 3: joints,<name0>,...
    {
        auto fields = split_csv(next_line(3));
        if (fields.size() < 2 || fields[0] != "joints")
            throw ParseError(origin + ": line 3: malformed header, expected 'joints,<name0>,...'");
        seq.joint_names.assign(fields.begin() + 1, fields.end());
        for (const auto& n : seq.joint_names) {
            if (n.empty())
                throw ParseError(origin + ": line 3: empty joint name");
        }
    }

    const int n = seq.num_joints();
    const size_t expected = 1 + 3 * static_cast<size_t>(n);
    std::vector<double> values;
    int64_t rows = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        ++rows;
        const std::string where = origin + ": row " + std::to_string(rows);
        auto fields = split_csv(line);
        if (fields.size() != expected)
            throw ParseError("row " + std::to_string(rows) + ": expected " +
                             std::to_string(expected) + " fields" + " [" + origin + "]");
        parse_number(fields[0], where); // frame index column; value itself unused
        for (size_t f = 1; f < fields.size(); ++f)
            values.push_back(parse_number(fields[f], where));
    }
    if (rows == 0) throw ParseError(origin + ": no data rows");

    seq.frames.resize({rows, n, 3});
    std::copy(values.begin(), values.end(), seq.frames.data());
    seq.validate();
    return seq;
}

MotionSequence parse_motion_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_motion_csv_text(ss.str(), path);
}

std::string motion_csv_text(const MotionSequence& seq) {
    seq.validate();
    std::string out;
    out += "rate," + format_g9(seq.frame_rate) + "\n";
    out += "convention," + to_string(seq.convention) + "\n";
    out += "joints";
    for (const auto& n : seq.joint_names) out += "," + n;
    out += "\n";
    const int64_t T = seq.num_frames();
    const int n = seq.num_joints();
    for (int64_t t = 0; t < T; ++t) {
        out += std::to_string(t);
        const double* row = seq.frames.data() + t * n * 3;
        for (int64_t i = 0; i < n * 3; ++i) out += "," + format_g9(row[i]);
        out += "\n";
    }
    return out;
}

void write_motion_csv(const MotionSequence& seq, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << motion_csv_text(seq);
    if (!out) throw IoError("write failed for '" + path + "'");
}

MotionSequence downsample(const MotionSequence& seq, int64_t factor) {
    if (factor < 1) throw std::invalid_argument("downsample: factor must be >= 1");
    seq.validate();
    const int64_t T = seq.num_frames();
    const int n = seq.num_joints();
    const int64_t out_T = (T + factor - 1) / factor;
    MotionSequence out = seq;
    out.frame_rate = seq.frame_rate / static_cast<double>(factor);
    out.frames.resize({out_T, n, 3});
    for (int64_t i = 0; i < out_T; ++i) {
        const double* src = seq.frames.data() + (i * factor) * n * 3;
        double* dst = out.frames.data() + i * n * 3;
        std::copy(src, src + n * 3, dst);
    }
    return out;
}

MotionSequence select_joints(const MotionSequence& seq, const std::vector<int>& indices) {
    seq.validate();
    const int n = seq.num_joints();
    std::set<int> seen;
    for (int idx : indices) {
        if (idx < 0 || idx >= n)
            throw std::invalid_argument("select_joints: index " + std::to_string(idx) +
                                        " out of range [0, " + std::to_string(n) + ")");
        if (!seen.insert(idx).second)
            throw std::invalid_argument("select_joints: duplicate index " + std::to_string(idx));
    }
    if (indices.empty()) throw std::invalid_argument("select_joints: empty index list");

    MotionSequence out;
    out.frame_rate = seq.frame_rate;
    out.convention = seq.convention;
    out.scenario_label = seq.scenario_label;
    for (int idx : indices) out.joint_names.push_back(seq.joint_names[static_cast<size_t>(idx)]);
    const int64_t T = seq.num_frames();
    const int m = static_cast<int>(indices.size());
    out.frames.resize({T, m, 3});
    for (int64_t t = 0; t < T; ++t) {
        for (int j = 0; j < m; ++j) {
            const double* src = seq.frames.data() + (t * n + indices[static_cast<size_t>(j)]) * 3;
            double* dst = out.frames.data() + (t * m + j) * 3;
            dst[0] = src[0];
            dst[1] = src[1];
            dst[2] = src[2];
        }
    }
    return out;
}

std::vector<int> default_joint_indices(const MotionSequence& seq) {
    std::vector<int> idx;
    for (int j = 0; j < seq.num_joints(); ++j) {
        if (seq.joint_names[static_cast<size_t>(j)] != "translation") idx.push_back(j);
    }
    return idx;
}

std::vector<PoseWindow> make_windows(const MotionSequence& seq, int64_t l, int64_t stride) {
    seq.validate();
    if (l < 1) throw std::invalid_argument("make_windows: window length must be >= 1");
    if (stride < 1) throw std::invalid_argument("make_windows: stride must be >= 1");
    const int64_t T = seq.num_frames();
    if (T < l)
        throw std::invalid_argument("make_windows: sequence too short (" + std::to_string(T) +
                                    " frames, window " + std::to_string(l) + ")");
    const int n = seq.num_joints();
    const int64_t count = (T - l) / stride + 1;
    std::vector<PoseWindow> out;
    out.reserve(static_cast<size_t>(count));
    for (int64_t w = 0; w < count; ++w) {
        PoseWindow win;
        win.start_frame = w * stride;
        win.source_id = seq.scenario_label;
        win.x.resize({l, n, 3});
        const double* src = seq.frames.data() + win.start_frame * n * 3;
        std::copy(src, src + l * n * 3, win.x.data());
        win.x_bar = win.x;
        win.masked_joint = -1;
        out.push_back(std::move(win));
    }
    return out;
}

PoseWindow mask_joint(const PoseWindow& window, int k) {
    const int64_t n = window.x.dim(1);
    if (k < 0 || k >= n)
        throw std::invalid_argument("mask_joint: joint index " + std::to_string(k) +
                                    " out of range [0, " + std::to_string(n) + ")");
    PoseWindow out = window;
    out.x_bar = window.x;
    out.masked_joint = k;
    const int64_t l = window.x.dim(0);
    for (int64_t t = 0; t < l; ++t) {
        double* row = out.x_bar.data() + (t * n + k) * 3;
        row[0] = row[1] = row[2] = 0.0;
    }
    return out;
}

void SynthGaitSpec::validate() const {
    if (duration_frames == 0) throw std::invalid_argument("empty sequence");
    if (duration_frames < 0) throw std::invalid_argument("SynthGaitSpec: negative duration");
    if (n_joints < 2) throw std::invalid_argument("SynthGaitSpec: need at least 2 joints");
    if (knee_index < 0 || knee_index >= n_joints)
        throw std::invalid_argument("SynthGaitSpec: knee_index out of range");
    if (!(frame_rate > 0.0) || !std::isfinite(frame_rate) ||
        !std::isfinite(base_frequency_hz) || !std::isfinite(noise_std_deg) || noise_std_deg < 0.0)
        throw std::invalid_argument("SynthGaitSpec: non-finite or invalid scalar field");
    if (amplitude.rank() != 2 || amplitude.dim(0) != n_joints || amplitude.dim(1) != 3)
        throw std::invalid_argument("SynthGaitSpec: amplitude must be n x 3");
    if (phase.rank() != 2 || phase.dim(0) != n_joints || phase.dim(1) != 3)
        throw std::invalid_argument("SynthGaitSpec: phase must be n x 3");
    if (coupling.rank() != 2 || coupling.dim(0) != 3 || coupling.dim(1) != 3 * n_joints)
        throw std::invalid_argument("SynthGaitSpec: coupling must be 3 x 3n");
    if (!amplitude.all_finite() || !phase.all_finite() || !coupling.all_finite())
        throw std::invalid_argument("SynthGaitSpec: non-finite array value");
    for (int c = 0; c < 3; ++c) {
        for (int cc = 0; cc < 3; ++cc) {
            if (coupling.at(c, knee_index * 3 + cc) != 0.0)
                throw std::invalid_argument("SynthGaitSpec: coupling into the knee's own channels must be zero");
        }
    }
    if (!joint_names.empty() && static_cast<int>(joint_names.size()) != n_joints)
        throw std::invalid_argument("SynthGaitSpec: joint_names size mismatch");
}

MotionSequence synth_gait(const SynthGaitSpec& spec) {
    spec.validate();
    const int n = spec.n_joints;
    const int64_t T = spec.duration_frames;
    const int k = spec.knee_index;

    MotionSequence seq;
    seq.frame_rate = spec.frame_rate;
    seq.convention = Convention::euler_xyz;
    seq.scenario_label = spec.scenario_label;
    if (spec.joint_names.empty()) {
        for (int j = 0; j < n; ++j) seq.joint_names.push_back("joint" + std::to_string(j));
    } else {
        seq.joint_names = spec.joint_names;
    }
    seq.frames.resize({T, n, 3});

    Rng noise(spec.seed);
    const double omega = 2.0 * M_PI * spec.base_frequency_hz / spec.frame_rate;
    for (int64_t t = 0; t < T; ++t) {
        double* frame = seq.frames.data() + t * n * 3;
        for (int j = 0; j < n; ++j) {
            if (j == k) continue;
            for (int c = 0; c < 3; ++c)
                frame[j * 3 + c] =
                    spec.amplitude.at(j, c) * std::sin(omega * static_cast<double>(t) + spec.phase.at(j, c));
        }
        for (int c = 0; c < 3; ++c) {
            double v = 0.0;
            for (int j = 0; j < n; ++j) {
                if (j == k) continue;
                for (int cc = 0; cc < 3; ++cc) v += spec.coupling.at(c, j * 3 + cc) * frame[j * 3 + cc];
            }
            if (spec.noise_std_deg > 0.0) v += noise.normal(0.0, spec.noise_std_deg);
            frame[k * 3 + c] = v;
        }
    }
    return seq;
}

SynthGaitSpec synthetic_subject_spec(int n_joints, int knee_index,
                                     const std::vector<int>& coupled_joints,
                                     int subject, uint64_t seed,
                                     int64_t duration_frames, double noise_std_deg) {
    if (n_joints < 2) throw std::invalid_argument("synthetic_subject_spec: need at least 2 joints");
    if (knee_index < 0 || knee_index >= n_joints)
        throw std::invalid_argument("synthetic_subject_spec: knee_index out of range");
    for (int j : coupled_joints) {
        if (j < 0 || j >= n_joints || j == knee_index)
            throw std::invalid_argument("synthetic_subject_spec: bad coupled joint " + std::to_string(j));
    }

    SynthGaitSpec spec;
    spec.n_joints = n_joints;
    spec.knee_index = knee_index;
    spec.duration_frames = duration_frames;
    spec.noise_std_deg = noise_std_deg;
    spec.seed = derive_seed(seed, "noise-" + std::to_string(subject));
    spec.scenario_label = "subject" + std::to_string(subject);

    // Subject-specific style: amplitudes, phases, cadence.
    Rng style(derive_seed(seed, "style-" + std::to_string(subject)));
    spec.base_frequency_hz = style.uniform(0.9, 1.1);
    spec.amplitude.resize({n_joints, 3});
    spec.phase.resize({n_joints, 3});
    for (int j = 0; j < n_joints; ++j) {
        for (int c = 0; c < 3; ++c) {
            spec.amplitude.at(j, c) = style.uniform(10.0, 35.0);
            spec.phase.at(j, c) = style.uniform(0.0, 2.0 * M_PI);
        }
    }
    // Knee amplitude/phase are outputs of the coupling, not free parameters.
    for (int c = 0; c < 3; ++c) {
        spec.amplitude.at(knee_index, c) = 0.0;
        spec.phase.at(knee_index, c) = 0.0;
    }

    // Shared coupling map, identical for every subject of this seed: a
    // positive synergy weight per driving joint times a fixed base map.
    Rng couple(derive_seed(seed, "coupling"));
    spec.coupling.resize({3, 3 * n_joints});
    spec.coupling.zero();
    std::vector<double> alpha(static_cast<size_t>(n_joints), 0.0);
    double weight_mass = 0.0;
    for (int j : coupled_joints) {
        alpha[static_cast<size_t>(j)] = couple.uniform(0.4, 1.0);
        weight_mass += alpha[static_cast<size_t>(j)];
    }
    static const double base[3][3] = {{1.0, 0.2, 0.0}, {0.0, 0.9, 0.15}, {0.1, 0.0, 0.8}};
    if (weight_mass > 0.0) {
        // Scale so the knee flexion channel swings like a real knee (tens of
        // degrees) given the ~22 degree mean driver amplitude.
        const double scale = 40.0 / (22.5 * weight_mass);
        for (int c = 0; c < 3; ++c)
            for (int j : coupled_joints)
                for (int cc = 0; cc < 3; ++cc)
                    spec.coupling.at(c, j * 3 + cc) =
                        scale * alpha[static_cast<size_t>(j)] * base[c][cc];
    }
    return spec;
}

std::vector<SynthGaitSpec> synthetic_subject_trial_specs(
    int n_joints, int knee_index, const std::vector<int>& coupled_joints, int subject,
    int trials, uint64_t seed, int64_t duration_frames, double noise_std_deg) {
    if (trials < 1) throw std::invalid_argument("synthetic_subject_trial_specs: need at least 1 trial");
    std::vector<SynthGaitSpec> out;
    for (int t = 0; t < trials; ++t) {
        SynthGaitSpec spec = synthetic_subject_spec(n_joints, knee_index, coupled_joints,
                                                    subject * 100 + t, seed, duration_frames,
                                                    noise_std_deg);
        spec.scenario_label = "subject" + std::to_string(subject);
        out.push_back(std::move(spec));
    }
    return out;
}

} // namespace aepm
