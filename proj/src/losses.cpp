#include "aepm/losses.hpp"

#include <cmath>

#include "aepm/errors.hpp"

namespace aepm {

namespace {

void check_shapes(const PredictionSet& pred, const Tensor& x) {
    if (x.rank() != 4 || pred.predictions.rank() != 5)
        throw ShapeError("loss: expected x of rank 4 and predictions of rank 5");
    for (int i = 0; i < 3; ++i) {
        if (x.dim(i) != pred.predictions.dim(i))
            throw ShapeError("loss: x shape " + x.shape_str() + " does not match predictions " +
                             pred.predictions.shape_str());
    }
    if (x.dim(3) != 3) throw ShapeError("loss: x must have 3 channels");
}

// Residual norm of sample i for batch element bi over the flattened
// l*n*3 entries.
double sample_norm(const PredictionSet& pred, const Tensor& x, int64_t bi, int64_t i) {
    const int64_t l = x.dim(1), n = x.dim(2);
    const int64_t nsamp = pred.predictions.dim(3);
    double acc = 0.0;
    for (int64_t t = 0; t < l; ++t)
        for (int64_t j = 0; j < n; ++j) {
            const double* xh = pred.predictions.data() + ((((bi * l + t) * n + j) * nsamp) + i) * 3;
            const double* xt = x.data() + ((bi * l + t) * n + j) * 3;
            for (int64_t c = 0; c < 3; ++c) {
                double r = xt[c] - xh[c];
                acc += r * r;
            }
        }
    return std::sqrt(acc);
}

// d(norm or norm^2)/d(x_hat_i) scaled by `scale`, accumulated into dpred.
void add_sample_grad(const PredictionSet& pred, const Tensor& x, int64_t bi, int64_t i,
                     double norm, bool squared, double scale, Tensor& dpred) {
    const int64_t l = x.dim(1), n = x.dim(2);
    const int64_t nsamp = pred.predictions.dim(3);
    double factor;
    if (squared) {
        factor = 2.0 * scale;
    } else {
        if (norm <= 0.0) return; // non-differentiable point; subgradient 0
        factor = scale / norm;
    }
    for (int64_t t = 0; t < l; ++t)
        for (int64_t j = 0; j < n; ++j) {
            const int64_t base = ((((bi * l + t) * n + j) * nsamp) + i) * 3;
            const double* xt = x.data() + ((bi * l + t) * n + j) * 3;
            for (int64_t c = 0; c < 3; ++c)
                dpred[base + c] += factor * (pred.predictions[base + c] - xt[c]);
        }
}

} // namespace

double loss_stage1(const PredictionSet& pred, const Tensor& x, bool squared) {
    check_shapes(pred, x);
    const int64_t b = x.dim(0);
    const int64_t nsamp = pred.predictions.dim(3);
    double total = 0.0;
    for (int64_t bi = 0; bi < b; ++bi) {
        double per = 0.0;
        for (int64_t i = 0; i < nsamp; ++i) {
            double norm = sample_norm(pred, x, bi, i);
            per += squared ? norm * norm : norm;
        }
        total += per / static_cast<double>(nsamp);
    }
    return total / static_cast<double>(b);
}

double loss_stage2(const PredictionSet& pred, const Tensor& x, bool squared) {
    check_shapes(pred, x);
    const int64_t b = x.dim(0);
    const int64_t nsamp = pred.predictions.dim(3);
    double total = 0.0;
    for (int64_t bi = 0; bi < b; ++bi) {
        double best = 0.0;
        for (int64_t i = 0; i < nsamp; ++i) {
            double norm = sample_norm(pred, x, bi, i);
            if (i == 0 || norm < best) best = norm;
        }
        total += squared ? best * best : best;
    }
    return total / static_cast<double>(b);
}

double loss_stage1_backward(const PredictionSet& pred, const Tensor& x, bool squared,
                            Tensor& d_predictions) {
    check_shapes(pred, x);
    const int64_t b = x.dim(0);
    const int64_t nsamp = pred.predictions.dim(3);
    d_predictions.resize(pred.predictions.shape());
    d_predictions.zero();
    const double scale = 1.0 / static_cast<double>(b * nsamp);
    double total = 0.0;
    for (int64_t bi = 0; bi < b; ++bi) {
        double per = 0.0;
        for (int64_t i = 0; i < nsamp; ++i) {
            double norm = sample_norm(pred, x, bi, i);
            per += squared ? norm * norm : norm;
            add_sample_grad(pred, x, bi, i, norm, squared, scale, d_predictions);
        }
        total += per / static_cast<double>(nsamp);
    }
    return total / static_cast<double>(b);
}

double loss_stage2_backward(const PredictionSet& pred, const Tensor& x, bool squared,
                            Tensor& d_predictions) {
    check_shapes(pred, x);
    const int64_t b = x.dim(0);
    const int64_t nsamp = pred.predictions.dim(3);
    d_predictions.resize(pred.predictions.shape());
    d_predictions.zero();
    const double scale = 1.0 / static_cast<double>(b);
    double total = 0.0;
    for (int64_t bi = 0; bi < b; ++bi) {
        double best = 0.0;
        int64_t best_i = 0;
        for (int64_t i = 0; i < nsamp; ++i) {
            double norm = sample_norm(pred, x, bi, i);
            if (i == 0 || norm < best) {
                best = norm;
                best_i = i;
            }
        }
        total += squared ? best * best : best;
        add_sample_grad(pred, x, bi, best_i, best, squared, scale, d_predictions);
    }
    return total / static_cast<double>(b);
}

} // namespace aepm
