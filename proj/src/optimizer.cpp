#include "aepm/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace aepm {

AdamW::AdamW(const ModelParameters& reference, AdamWConfig config) : config_(config) {
    visit_parameters(reference, [&](const std::string&, ParamKind kind, const Tensor& t) {
        m_.push_back(Tensor::zeros_like(t));
        v_.push_back(Tensor::zeros_like(t));
        kinds_.push_back(kind);
    });
}

double AdamW::update(double param, double grad, double& m, double& v, int64_t t,
                     const AdamWConfig& cfg, bool decay) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad;
    const double mhat = m / (1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
    const double vhat = v / (1.0 - std::pow(cfg.beta2, static_cast<double>(t)));
    double out = param - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    if (decay) out -= cfg.learning_rate * cfg.weight_decay * param;
    return out;
}

void AdamW::step(ModelParameters& params, const ModelParameters& grads) {
    ++step_;
    size_t slot = 0;
    std::vector<const Tensor*> gradient_tensors;
    visit_parameters(grads, [&](const std::string&, ParamKind, const Tensor& t) {
        gradient_tensors.push_back(&t);
    });
    visit_parameters(params, [&](const std::string& name, ParamKind kind, Tensor& t) {
        if (slot >= gradient_tensors.size()) throw std::logic_error("AdamW: parameter count drift");
        const Tensor& g = *gradient_tensors[slot];
        Tensor& m = m_[slot];
        Tensor& v = v_[slot];
        if (g.size() != t.size() || m.size() != t.size())
            throw std::logic_error("AdamW: shape drift for " + name);
        const bool decay = kind == ParamKind::weight;
        for (int64_t i = 0; i < t.size(); ++i)
            t[i] = update(t[i], g[i], m[i], v[i], step_, config_, decay);
        ++slot;
    });
}

} // namespace aepm
