#pragma once

#include "aepm/model.hpp"
#include "aepm/tensor.hpp"

namespace aepm {

/// Stage-1 loss: per batch element, the L2 norm of the flattened residual
/// x - x_hat_i over all l*n*3 entries, averaged over the N samples and the
/// batch. `squared` switches to the squared-norm variant.
double loss_stage1(const PredictionSet& pred, const Tensor& x, bool squared = false);

/// Stage-2 loss: per batch element, the residual norm of the best sample
/// (argmin over i, ties broken toward the lowest index), batch-averaged.
double loss_stage2(const PredictionSet& pred, const Tensor& x, bool squared = false);

/// Same losses with d(loss)/d(predictions) written to `d_predictions`
/// (resized to match pred.predictions). Stage-2 gradients flow only through
/// each element's selected sample.
double loss_stage1_backward(const PredictionSet& pred, const Tensor& x, bool squared,
                            Tensor& d_predictions);
double loss_stage2_backward(const PredictionSet& pred, const Tensor& x, bool squared,
                            Tensor& d_predictions);

} // namespace aepm
