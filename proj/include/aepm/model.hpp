#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "aepm/tensor.hpp"

namespace aepm {

/// Network hyperparameters. The published settings are n=16, l=25, M=4 for
/// Human3.6M-style data and n=14, l=30, M=5 for CMU-style data, both with
/// d=32 and N=10 samples.
struct ModelConfig {
    int joints = 16;       // n
    int frames = 25;       // l
    int embed_dim = 32;    // d
    int layer_pairs = 4;   // M spatial+temporal block pairs
    int samples = 10;      // N
    int heads = 4;
    int mlp_hidden = 0;    // decoder hidden width; 0 means embed_dim
    bool pre_norm = false; // post-norm residual blocks by default
    bool squared_norm_loss = false;

    int head_dim() const { return embed_dim / heads; }
    int decoder_hidden() const { return mlp_hidden > 0 ? mlp_hidden : embed_dim; }
    int block_hidden() const { return 2 * embed_dim; }
    void validate() const; // throws std::invalid_argument

    static ModelConfig h36m();
    static ModelConfig cmu();
};

struct Linear {
    Tensor w; // {out, in}
    Tensor b; // {out}
};

struct LayerNormParams {
    Tensor gamma; // {d}
    Tensor beta;  // {d}
};

struct AttentionParams {
    Tensor wq, wk, wv, wo; // {d, d} each, bias-free projections
};

struct BlockParams {
    AttentionParams attn;
    LayerNormParams norm1;
    Linear mlp1; // {2d, d}
    Linear mlp2; // {d, 2d}
    LayerNormParams norm2;
};

struct DecoderParams {
    Linear l1, l2, l3; // three affine layers, gelu after l1 and l2
};

/// Every learnable array of the model. Shapes derive solely from the config.
struct ModelParameters {
    ModelConfig config;
    Linear input_embed;  // {d, 3}
    Tensor spatial_pos;  // {n, d}
    Tensor temporal_pos; // {l, d}
    std::vector<BlockParams> spatial;  // M
    std::vector<BlockParams> temporal; // M
    DecoderParams dec_mean;    // d -> h -> h -> 3
    DecoderParams dec_sigma;   // d -> h -> h -> 1
    DecoderParams dec_sampler; // d -> h -> h -> N*3
};

enum class ParamKind { weight, bias, norm, positional };

/// Visit every parameter tensor in a fixed order (checkpoint layout,
/// optimizer state and gradient checks all rely on this order).
void visit_parameters(ModelParameters& p,
                      const std::function<void(const std::string&, ParamKind, Tensor&)>& f);
void visit_parameters(const ModelParameters& p,
                      const std::function<void(const std::string&, ParamKind, const Tensor&)>& f);

ModelParameters init_parameters(const ModelConfig& config, uint64_t seed);
/// Same structure as `p` with every tensor zeroed; used as a gradient holder.
ModelParameters zeros_like(const ModelParameters& p);
int64_t parameter_count(const ModelParameters& p);

struct LatentFeatures {
    Tensor c; // {b, l, n, d}
};

/// One forward pass worth of outputs: mean, sigma, raw samples and the
/// reparameterized predictions x_hat_i = mu + sigma / std_N(S) * S_i.
struct PredictionSet {
    Tensor mu;          // {b, l, n, 3}
    Tensor sigma;       // {b, l, n, 1}, strictly positive
    Tensor samples;     // {b, l, n, N, 3}
    Tensor predictions; // {b, l, n, N, 3}
};

/// Post-softmax attention weights captured during a forward pass.
/// spatial[m] has shape {heads, b*l, n, n}; temporal[m], when captured,
/// has shape {heads, b*n, l, l}.
struct AttentionRecord {
    std::vector<Tensor> spatial;
    std::vector<Tensor> temporal;
    bool has_temporal = false;
};

enum class Capture { none, spatial, spatial_and_temporal };

// ---- forward/backward caches -------------------------------------------

struct LayerNormWork {
    Tensor xhat;    // same shape as input
    Tensor inv_std; // {tokens}
};

struct AttentionWork {
    Tensor q, k, v;  // {G, R, d}
    Tensor weights;  // {G, heads, R, R}
    Tensor context;  // {G, R, d}
};

struct BlockWork {
    Tensor x;  // block input {G, R, d}
    Tensor hx; // pre-norm only: norm1(x)
    AttentionWork attn;
    Tensor attn_out; // {G, R, d}
    Tensor s1;       // x + attn_out
    LayerNormWork ln1;
    Tensor mlp_in;  // input to the mlp sub-block
    Tensor mlp_pre; // {G, R, 2d}
    Tensor mlp_act; // {G, R, 2d}
    Tensor mlp_out; // {G, R, d}
    Tensor s2;      // post-norm only: mlp_in + mlp_out
    LayerNormWork ln2;
};

struct DecoderWork {
    Tensor p1, h1, p2, h2, out;
};

struct DecodeWork {
    DecoderWork mean_w, sigma_w, sampler_w;
    Tensor sigma_raw; // {tokens}
    Tensor sample_mean; // {tokens, 3} mean over the N axis
    Tensor sample_std;  // {tokens, 3} population std, clamped at 1e-8
    std::vector<uint8_t> clamped; // per (token, channel)
};

struct ForwardTrace {
    Tensor x_bar; // {b, l, n, 3}
    Tensor tokens0;
    std::vector<BlockWork> sblocks;
    std::vector<BlockWork> tblocks;
    Tensor latent; // c
    DecodeWork dec;
};

// ---- operations ----------------------------------------------------------

/// Per-token affine map 3 -> d applied identically across b, l, n.
Tensor embed_input(const Tensor& x_bar, const ModelParameters& params);

/// Multi-head scaled dot-product self-attention over tokens (single group):
/// softmax(Q Kt / sqrt(d_k)) V per head, heads concatenated, output-projected.
/// When `weights` is non-null the post-softmax weights {heads, R, R} are
/// written to it.
Tensor self_attention(const Tensor& x, const AttentionParams& p, int heads,
                      Tensor* weights = nullptr);

/// Full transformer block (attention + mlp sub-blocks with residual
/// connections and layer normalization) over the joint axis;
/// input {b, l, n, d}.
Tensor spatial_block(const Tensor& f, const BlockParams& p, const ModelConfig& cfg,
                     Tensor* weights = nullptr);
/// Same over the frame axis; input {b, l, n, d}.
Tensor temporal_block(const Tensor& f, const BlockParams& p, const ModelConfig& cfg,
                      Tensor* weights = nullptr);

LatentFeatures encode(const Tensor& x_bar, const ModelParameters& params,
                      Capture capture = Capture::none, AttentionRecord* record = nullptr);
PredictionSet decode(const LatentFeatures& c, const ModelParameters& params);

PredictionSet forward(const Tensor& x_bar, const ModelParameters& params,
                      Capture capture = Capture::none, AttentionRecord* record = nullptr);

/// Forward pass that keeps every intermediate needed by `backward`.
PredictionSet forward_with_trace(const Tensor& x_bar, const ModelParameters& params,
                                 ForwardTrace& trace,
                                 Capture capture = Capture::none,
                                 AttentionRecord* record = nullptr);

/// Accumulate d(loss)/d(parameters) into `grads` given d(loss)/d(predictions).
void backward(const ModelParameters& params, const ForwardTrace& trace,
              const PredictionSet& pred, const Tensor& d_predictions,
              ModelParameters& grads);

} // namespace aepm
