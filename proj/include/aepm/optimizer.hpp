#pragma once

#include <vector>

#include "aepm/model.hpp"

namespace aepm {

struct AdamWConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;
};

/// Adam with decoupled weight decay. Decay is applied to weight matrices
/// only, never to biases, layer-norm scales/offsets or positional
/// embeddings.
class AdamW {
public:
    AdamW(const ModelParameters& reference, AdamWConfig config);

    void step(ModelParameters& params, const ModelParameters& grads);

    int64_t step_count() const { return step_; }
    const AdamWConfig& config() const { return config_; }

    /// Single-coordinate update rule, exposed for verification against a
    /// hand-computed step.
    static double update(double param, double grad, double& m, double& v, int64_t t,
                         const AdamWConfig& cfg, bool decay);

private:
    AdamWConfig config_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    std::vector<ParamKind> kinds_;
    int64_t step_ = 0;
};

} // namespace aepm
