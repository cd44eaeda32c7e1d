#include "aepm/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>

#include "aepm/errors.hpp"
#include "aepm/parallel.hpp"
#include "aepm/rng.hpp"

namespace aepm {

void TrainConfig::validate() const {
    if (learning_rate <= 0.0 || !std::isfinite(learning_rate))
        throw std::invalid_argument("TrainConfig: learning rate must be positive");
    if (batch_size <= 0) throw std::invalid_argument("TrainConfig: batch size must be positive");
    if (weight_decay < 0.0) throw std::invalid_argument("TrainConfig: negative weight decay");
    if (max_epochs <= 0) throw std::invalid_argument("TrainConfig: max epochs must be positive");
    if (stage_shift_epoch < 0 || stage_shift_epoch >= max_epochs)
        throw std::invalid_argument("TrainConfig: stage shift must be below max epochs");
    if (patience <= 0) throw std::invalid_argument("TrainConfig: patience must be positive");
    if (window_stride < 1) throw std::invalid_argument("TrainConfig: stride must be >= 1");
}

namespace {

// Sum of scaled per-window gradient contributions, in window order.
void accumulate_scaled(ModelParameters& total, const ModelParameters& part, double scale) {
    std::vector<const Tensor*> src;
    visit_parameters(part, [&](const std::string&, ParamKind, const Tensor& t) { src.push_back(&t); });
    size_t slot = 0;
    visit_parameters(total, [&](const std::string&, ParamKind, Tensor& t) {
        const Tensor& s = *src[slot++];
        for (int64_t i = 0; i < t.size(); ++i) t[i] += scale * s[i];
    });
}

double window_loss_and_grad(const ModelParameters& params, const PoseWindow& window, Stage stage,
                            ModelParameters& grads) {
    const ModelConfig& cfg = params.config;
    const int64_t l = cfg.frames, n = cfg.joints;
    Tensor x_bar({1, l, n, 3});
    Tensor x({1, l, n, 3});
    std::copy(window.x_bar.data(), window.x_bar.data() + l * n * 3, x_bar.data());
    std::copy(window.x.data(), window.x.data() + l * n * 3, x.data());

    ForwardTrace trace;
    PredictionSet pred = forward_with_trace(x_bar, params, trace);
    Tensor dpred;
    double loss = stage == Stage::s1
                      ? loss_stage1_backward(pred, x, cfg.squared_norm_loss, dpred)
                      : loss_stage2_backward(pred, x, cfg.squared_norm_loss, dpred);
    backward(params, trace, pred, dpred, grads);
    return loss;
}

double validation_rmse(const ModelParameters& params, const TrainDataset& dataset) {
    std::vector<EvalTrace> traces;
    traces.reserve(dataset.validation_sequences.size());
    for (const auto& seq : dataset.validation_sequences)
        traces.push_back(sliding_infer(params, seq, dataset.masked_joint, dataset.eval));
    return aggregate_traces(traces, dataset.eval).back().mean_rmse_deg;
}

std::string format_g9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

} // namespace

double train_step(ModelParameters& params, AdamW& optimizer,
                  const std::vector<const PoseWindow*>& batch, Stage stage) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    const int64_t b = static_cast<int64_t>(batch.size());

    std::vector<ModelParameters> window_grads;
    window_grads.reserve(static_cast<size_t>(b));
    for (int64_t i = 0; i < b; ++i) window_grads.push_back(zeros_like(params));
    std::vector<double> losses(static_cast<size_t>(b), 0.0);

    parallel_for(b, [&](int64_t i) {
        losses[static_cast<size_t>(i)] = window_loss_and_grad(
            params, *batch[static_cast<size_t>(i)], stage, window_grads[static_cast<size_t>(i)]);
    });

    double loss = 0.0;
    ModelParameters total = zeros_like(params);
    const double scale = 1.0 / static_cast<double>(b);
    for (int64_t i = 0; i < b; ++i) {
        loss += losses[static_cast<size_t>(i)];
        accumulate_scaled(total, window_grads[static_cast<size_t>(i)], scale);
    }
    loss *= scale;
    if (!std::isfinite(loss))
        throw NumericError("train_step: non-finite loss over batch starting at window '" +
                           batch[0]->source_id + "' frame " + std::to_string(batch[0]->start_frame));

    optimizer.step(params, total);
    return loss;
}

TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config,
                  const TrainDataset& dataset, const ModelParameters* resume_from,
                  int start_epoch) {
    model_config.validate();
    train_config.validate();
    if (dataset.train_sequences.empty() || dataset.validation_sequences.empty())
        throw std::invalid_argument("train: empty dataset");

    // Window the training subjects once; windows are masked up front and
    // scaled into model units (euler degrees -> radians).
    std::vector<PoseWindow> windows;
    for (const auto& seq : dataset.train_sequences) {
        if (seq.num_joints() != model_config.joints)
            throw ShapeError("train: sequence has " + std::to_string(seq.num_joints()) +
                             " joints, model expects " + std::to_string(model_config.joints));
        const double scale = model_input_scale(seq.convention);
        auto ws = make_windows(seq, model_config.frames, train_config.window_stride);
        for (auto& w : ws) {
            PoseWindow masked = mask_joint(w, dataset.masked_joint);
            if (scale != 1.0) {
                for (int64_t i = 0; i < masked.x.size(); ++i) masked.x[i] *= scale;
                for (int64_t i = 0; i < masked.x_bar.size(); ++i) masked.x_bar[i] *= scale;
            }
            windows.push_back(std::move(masked));
        }
    }
    if (windows.empty()) throw std::invalid_argument("train: no training windows");

    ModelParameters params = resume_from
                                 ? *resume_from
                                 : init_parameters(model_config, derive_seed(train_config.seed, "init"));
    AdamWConfig opt_cfg;
    opt_cfg.learning_rate = train_config.learning_rate;
    opt_cfg.weight_decay = train_config.weight_decay;
    AdamW optimizer(params, opt_cfg);

    TrainResult result;
    result.params = params;
    double best_val = std::numeric_limits<double>::infinity();
    int stale = 0;

    std::vector<size_t> order(windows.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = start_epoch; epoch < train_config.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const Stage stage = stage_of(epoch, train_config.stage_shift_epoch);

        std::mt19937_64 shuffle_rng(derive_seed(train_config.seed, "shuffle-" + std::to_string(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double epoch_loss = 0.0;
        int64_t seen = 0;
        for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(train_config.batch_size)) {
            const size_t end = std::min(order.size(), begin + static_cast<size_t>(train_config.batch_size));
            std::vector<const PoseWindow*> batch;
            batch.reserve(end - begin);
            for (size_t i = begin; i < end; ++i) batch.push_back(&windows[order[i]]);
            double loss = train_step(params, optimizer, batch, stage);
            epoch_loss += loss * static_cast<double>(end - begin);
            seen += static_cast<int64_t>(end - begin);
        }
        epoch_loss /= static_cast<double>(seen);

        const double val = validation_rmse(params, dataset);
        const auto t1 = std::chrono::steady_clock::now();

        LossReport report;
        report.epoch = epoch;
        report.stage = stage;
        report.train_loss = epoch_loss;
        report.val_rmse_deg = val;
        report.seconds = std::chrono::duration<double>(t1 - t0).count();
        result.log.push_back(report);

        if (val < best_val) {
            best_val = val;
            result.params = params;
            result.meta.best_val_rmse_deg = val;
            stale = 0;
        } else {
            ++stale;
        }
        result.meta.epochs_completed = static_cast<uint32_t>(epoch + 1);
        if (stale >= train_config.patience) break;
    }
    return result;
}

std::string training_log_tsv(const std::vector<LossReport>& log) {
    std::string out = "epoch\tstage\ttrain_loss\tval_rmse_deg\tseconds\n";
    for (const auto& r : log) {
        out += std::to_string(r.epoch);
        out += "\t";
        out += to_string(r.stage);
        out += "\t" + format_g9(r.train_loss) + "\t" + format_g9(r.val_rmse_deg) + "\t" +
               format_g9(r.seconds) + "\n";
    }
    return out;
}

GradCheckResult grad_check(const ModelConfig& config, uint64_t seed, double step,
                           int coords_per_group) {
    config.validate();
    const int64_t b = 2, l = config.frames, n = config.joints;
    Rng data_rng(derive_seed(seed, "data"));
    Tensor x({b, l, n, 3});
    for (int64_t i = 0; i < x.size(); ++i) x[i] = data_rng.normal(0.0, 1.0);
    Tensor x_bar = x;
    const int masked = static_cast<int>(n / 2);
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t t = 0; t < l; ++t) {
            double* row = x_bar.data() + ((bi * l + t) * n + masked) * 3;
            row[0] = row[1] = row[2] = 0.0;
        }

    ModelParameters params = init_parameters(config, derive_seed(seed, "init"));
    // Spread the sampler outputs apart by sample index. std_N(S) then stays
    // well away from the 1e-8 clamp and per-sample residual norms cannot tie,
    // which keeps the loss smooth across the finite-difference step.
    for (int i = 0; i < config.samples; ++i)
        for (int c = 0; c < 3; ++c)
            params.dec_sampler.l3.b[static_cast<int64_t>(i) * 3 + c] +=
                0.75 * static_cast<double>(i + 1);

    GradCheckResult result;
    result.min_sample_std = std::numeric_limits<double>::infinity();
    result.min_argmin_gap = std::numeric_limits<double>::infinity();

    auto loss_of = [&](Stage stage) {
        PredictionSet pred = forward(x_bar, params);
        return stage == Stage::s1 ? loss_stage1(pred, x, config.squared_norm_loss)
                                  : loss_stage2(pred, x, config.squared_norm_loss);
    };

    // Record clamp and argmin-tie margins at the evaluation point so callers
    // can confirm the input is safely differentiable.
    {
        ForwardTrace trace;
        PredictionSet pred = forward_with_trace(x_bar, params, trace);
        for (int64_t i = 0; i < trace.dec.sample_std.size(); ++i)
            result.min_sample_std = std::min(result.min_sample_std, trace.dec.sample_std[i]);
        const int64_t nsamp = config.samples;
        for (int64_t bi = 0; bi < b; ++bi) {
            std::vector<double> norms;
            for (int64_t i = 0; i < nsamp; ++i) {
                double acc = 0.0;
                for (int64_t t = 0; t < l * n; ++t)
                    for (int64_t c = 0; c < 3; ++c) {
                        double r = x[(bi * l * n + t) * 3 + c] -
                                   pred.predictions[((bi * l * n + t) * nsamp + i) * 3 + c];
                        acc += r * r;
                    }
                norms.push_back(std::sqrt(acc));
            }
            std::sort(norms.begin(), norms.end());
            if (norms.size() >= 2)
                result.min_argmin_gap = std::min(result.min_argmin_gap, norms[1] - norms[0]);
        }
    }

    for (Stage stage : {Stage::s1, Stage::s2}) {
        ForwardTrace trace;
        PredictionSet pred = forward_with_trace(x_bar, params, trace);
        Tensor dpred;
        if (stage == Stage::s1) loss_stage1_backward(pred, x, config.squared_norm_loss, dpred);
        else loss_stage2_backward(pred, x, config.squared_norm_loss, dpred);
        ModelParameters grads = zeros_like(params);
        backward(params, trace, pred, dpred, grads);

        std::vector<Tensor*> grad_tensors;
        visit_parameters(grads, [&](const std::string&, ParamKind, Tensor& t) {
            grad_tensors.push_back(&t);
        });

        double max_rel = 0.0;
        size_t slot = 0;
        visit_parameters(params, [&](const std::string& name, ParamKind, Tensor& t) {
            const Tensor& g = *grad_tensors[slot++];
            Rng pick(derive_seed(seed, "coords-" + name));
            std::vector<int64_t> coords;
            if (t.size() <= coords_per_group) {
                coords.resize(static_cast<size_t>(t.size()));
                std::iota(coords.begin(), coords.end(), 0);
            } else {
                std::vector<int64_t> all(static_cast<size_t>(t.size()));
                std::iota(all.begin(), all.end(), 0);
                for (int i = 0; i < coords_per_group; ++i) {
                    size_t j = static_cast<size_t>(i) +
                               static_cast<size_t>(pick.integer(static_cast<uint64_t>(all.size() - static_cast<size_t>(i))));
                    std::swap(all[static_cast<size_t>(i)], all[j]);
                    coords.push_back(all[static_cast<size_t>(i)]);
                }
            }
            for (int64_t idx : coords) {
                const double saved = t[idx];
                t[idx] = saved + step;
                const double up = loss_of(stage);
                t[idx] = saved - step;
                const double down = loss_of(stage);
                t[idx] = saved;
                const double numeric = (up - down) / (2.0 * step);
                const double analytic = g[idx];
                const double rel = std::abs(analytic - numeric) /
                                   std::max(1.0, std::abs(analytic) + std::abs(numeric));
                if (rel > max_rel) max_rel = rel;
            }
        });
        if (stage == Stage::s1) result.max_rel_error_s1 = max_rel;
        else result.max_rel_error_s2 = max_rel;
    }
    return result;
}

} // namespace aepm
