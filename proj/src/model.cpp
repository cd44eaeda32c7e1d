#include "aepm/model.hpp"

#include <cmath>
#include <cstring>

#include "aepm/errors.hpp"
#include "aepm/rng.hpp"

namespace aepm {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kSigmaFloor = 1e-6;
constexpr double kStdClamp = 1e-8;

inline double gelu(double x) { return 0.5 * x * std::erfc(-x * M_SQRT1_2); }
inline double gelu_grad(double x) {
    double cdf = 0.5 * std::erfc(-x * M_SQRT1_2);
    double pdf = std::exp(-0.5 * x * x) * 0.39894228040143267794; // 1/sqrt(2*pi)
    return cdf + x * pdf;
}
inline double softplus(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}
inline double sigmoid(double x) {
    if (x >= 0.0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

// y(m, n) = x(m, k) * w(n, k)^T + bias
void mat_nt(const double* x, int64_t m, int64_t k, const double* w, int64_t n,
            const double* bias, double* y) {
    for (int64_t i = 0; i < m; ++i) {
        const double* xi = x + i * k;
        double* yi = y + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const double* wj = w + j * k;
            double s = bias ? bias[j] : 0.0;
            for (int64_t kk = 0; kk < k; ++kk) s += xi[kk] * wj[kk];
            yi[j] = s;
        }
    }
}

// y(m, n) = (or +=) x(m, k) * b(k, n)
void mat_nn(const double* x, int64_t m, int64_t k, const double* b, int64_t n,
            double* y, bool accumulate) {
    for (int64_t i = 0; i < m; ++i) {
        double* yi = y + i * n;
        if (!accumulate) std::memset(yi, 0, sizeof(double) * static_cast<size_t>(n));
        const double* xi = x + i * k;
        for (int64_t kk = 0; kk < k; ++kk) {
            double a = xi[kk];
            const double* bk = b + kk * n;
            for (int64_t j = 0; j < n; ++j) yi[j] += a * bk[j];
        }
    }
}

// c(m, n) += a(k, m)^T * b(k, n)
void mat_tn_acc(const double* a, int64_t k, int64_t m, const double* b, int64_t n, double* c) {
    for (int64_t kk = 0; kk < k; ++kk) {
        const double* ar = a + kk * m;
        const double* br = b + kk * n;
        for (int64_t i = 0; i < m; ++i) {
            double ai = ar[i];
            if (ai == 0.0) continue;
            double* ci = c + i * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += ai * br[j];
        }
    }
}

void linear_forward(const Tensor& x, const Linear& p, Tensor& y) {
    const int64_t in = p.w.dim(1);
    const int64_t out = p.w.dim(0);
    const int64_t tokens = x.size() / in;
    mat_nt(x.data(), tokens, in, p.w.data(), out, p.b.empty() ? nullptr : p.b.data(), y.data());
}

// dx (assigned or accumulated) and parameter gradients for y = x w^T + b.
void linear_backward(const Tensor& x, const Linear& p, const Tensor& dy,
                     Tensor* dx, bool accumulate_dx, Linear& g) {
    const int64_t in = p.w.dim(1);
    const int64_t out = p.w.dim(0);
    const int64_t tokens = x.size() / in;
    if (dx) mat_nn(dy.data(), tokens, out, p.w.data(), in, dx->data(), accumulate_dx);
    mat_tn_acc(dy.data(), tokens, out, x.data(), in, g.w.data());
    if (!g.b.empty()) {
        double* db = g.b.data();
        for (int64_t t = 0; t < tokens; ++t) {
            const double* r = dy.data() + t * out;
            for (int64_t o = 0; o < out; ++o) db[o] += r[o];
        }
    }
}

void layernorm_forward(const Tensor& x, const LayerNormParams& p, LayerNormWork& w, Tensor& y) {
    const int64_t d = p.gamma.size();
    const int64_t tokens = x.size() / d;
    w.xhat.resize(x.shape());
    w.inv_std.resize({tokens});
    const double* gamma = p.gamma.data();
    const double* beta = p.beta.data();
    for (int64_t t = 0; t < tokens; ++t) {
        const double* xi = x.data() + t * d;
        double* xh = w.xhat.data() + t * d;
        double* yi = y.data() + t * d;
        double mean = 0.0;
        for (int64_t i = 0; i < d; ++i) mean += xi[i];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            double c = xi[i] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        double istd = 1.0 / std::sqrt(var + kLayerNormEps);
        w.inv_std[t] = istd;
        for (int64_t i = 0; i < d; ++i) {
            double xhat = (xi[i] - mean) * istd;
            xh[i] = xhat;
            yi[i] = gamma[i] * xhat + beta[i];
        }
    }
}

void layernorm_backward(const LayerNormParams& p, const LayerNormWork& w, const Tensor& dy,
                        Tensor& dx, LayerNormParams& g) {
    const int64_t d = p.gamma.size();
    const int64_t tokens = dy.size() / d;
    const double* gamma = p.gamma.data();
    double* dgamma = g.gamma.data();
    double* dbeta = g.beta.data();
    for (int64_t t = 0; t < tokens; ++t) {
        const double* dyi = dy.data() + t * d;
        const double* xh = w.xhat.data() + t * d;
        double* dxi = dx.data() + t * d;
        const double istd = w.inv_std[t];
        double sum_dxhat = 0.0;
        double sum_dxhat_xhat = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            double dxhat = dyi[i] * gamma[i];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xh[i];
            dgamma[i] += dyi[i] * xh[i];
            dbeta[i] += dyi[i];
        }
        const double inv_d = 1.0 / static_cast<double>(d);
        for (int64_t i = 0; i < d; ++i) {
            double dxhat = dyi[i] * gamma[i];
            dxi[i] = istd * (dxhat - sum_dxhat * inv_d - xh[i] * (sum_dxhat_xhat * inv_d));
        }
    }
}

// Multi-head self-attention over G independent groups of R tokens.
void attention_forward(const Tensor& x, const AttentionParams& p, int heads, int64_t groups,
                       int64_t r_tokens, AttentionWork& w, Tensor& y) {
    const int64_t d = p.wq.dim(0);
    const int64_t dk = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    const int64_t tokens = groups * r_tokens;

    w.q.resize({groups, r_tokens, d});
    w.k.resize({groups, r_tokens, d});
    w.v.resize({groups, r_tokens, d});
    w.weights.resize({groups, heads, r_tokens, r_tokens});
    w.context.resize({groups, r_tokens, d});

    mat_nt(x.data(), tokens, d, p.wq.data(), d, nullptr, w.q.data());
    mat_nt(x.data(), tokens, d, p.wk.data(), d, nullptr, w.k.data());
    mat_nt(x.data(), tokens, d, p.wv.data(), d, nullptr, w.v.data());

    for (int64_t gi = 0; gi < groups; ++gi) {
        const double* q = w.q.data() + gi * r_tokens * d;
        const double* k = w.k.data() + gi * r_tokens * d;
        const double* v = w.v.data() + gi * r_tokens * d;
        double* ctx = w.context.data() + gi * r_tokens * d;
        std::memset(ctx, 0, sizeof(double) * static_cast<size_t>(r_tokens * d));
        for (int h = 0; h < heads; ++h) {
            const int64_t off = static_cast<int64_t>(h) * dk;
            double* wt = w.weights.data() + ((gi * heads) + h) * r_tokens * r_tokens;
            for (int64_t a = 0; a < r_tokens; ++a) {
                double* row = wt + a * r_tokens;
                const double* qa = q + a * d + off;
                double row_max = -1e300;
                for (int64_t bq = 0; bq < r_tokens; ++bq) {
                    const double* kb = k + bq * d + off;
                    double s = 0.0;
                    for (int64_t c = 0; c < dk; ++c) s += qa[c] * kb[c];
                    s *= scale;
                    row[bq] = s;
                    if (s > row_max) row_max = s;
                }
                double denom = 0.0;
                for (int64_t bq = 0; bq < r_tokens; ++bq) {
                    row[bq] = std::exp(row[bq] - row_max);
                    denom += row[bq];
                }
                const double inv = 1.0 / denom;
                double* out = ctx + a * d + off;
                for (int64_t bq = 0; bq < r_tokens; ++bq) {
                    row[bq] *= inv;
                    const double* vb = v + bq * d + off;
                    const double wgt = row[bq];
                    for (int64_t c = 0; c < dk; ++c) out[c] += wgt * vb[c];
                }
            }
        }
    }
    mat_nt(w.context.data(), tokens, d, p.wo.data(), d, nullptr, y.data());
}

// Accumulates into dx and the parameter gradients.
void attention_backward(const Tensor& x, const AttentionParams& p, int heads,
                        int64_t groups, int64_t r_tokens, const AttentionWork& w,
                        const Tensor& dy, Tensor& dx, AttentionParams& g) {
    const int64_t d = p.wq.dim(0);
    const int64_t dk = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    const int64_t tokens = groups * r_tokens;

    Tensor dctx({groups, r_tokens, d});
    mat_nn(dy.data(), tokens, d, p.wo.data(), d, dctx.data(), false);
    mat_tn_acc(dy.data(), tokens, d, w.context.data(), d, g.wo.data());

    Tensor dq({groups, r_tokens, d});
    Tensor dkt({groups, r_tokens, d});
    Tensor dv({groups, r_tokens, d});
    dq.zero();
    dkt.zero();
    dv.zero();
    std::vector<double> dwrow(static_cast<size_t>(r_tokens));

    for (int64_t gi = 0; gi < groups; ++gi) {
        const double* q = w.q.data() + gi * r_tokens * d;
        const double* k = w.k.data() + gi * r_tokens * d;
        const double* v = w.v.data() + gi * r_tokens * d;
        const double* dc = dctx.data() + gi * r_tokens * d;
        double* dqg = dq.data() + gi * r_tokens * d;
        double* dkg = dkt.data() + gi * r_tokens * d;
        double* dvg = dv.data() + gi * r_tokens * d;
        for (int h = 0; h < heads; ++h) {
            const int64_t off = static_cast<int64_t>(h) * dk;
            const double* wt = w.weights.data() + ((gi * heads) + h) * r_tokens * r_tokens;
            for (int64_t a = 0; a < r_tokens; ++a) {
                const double* wrow = wt + a * r_tokens;
                const double* dca = dc + a * d + off;
                // d(weights) and dV
                double dot = 0.0;
                for (int64_t bq = 0; bq < r_tokens; ++bq) {
                    const double* vb = v + bq * d + off;
                    double s = 0.0;
                    for (int64_t c = 0; c < dk; ++c) s += dca[c] * vb[c];
                    dwrow[static_cast<size_t>(bq)] = s;
                    dot += s * wrow[bq];
                    double* dvb = dvg + bq * d + off;
                    const double wgt = wrow[bq];
                    for (int64_t c = 0; c < dk; ++c) dvb[c] += wgt * dca[c];
                }
                // softmax backward, then dQ, dK
                double* dqa = dqg + a * d + off;
                for (int64_t bq = 0; bq < r_tokens; ++bq) {
                    double dscore = wrow[bq] * (dwrow[static_cast<size_t>(bq)] - dot) * scale;
                    if (dscore == 0.0) continue;
                    const double* kb = k + bq * d + off;
                    double* dkb = dkg + bq * d + off;
                    const double* qa = q + a * d + off;
                    for (int64_t c = 0; c < dk; ++c) {
                        dqa[c] += dscore * kb[c];
                        dkb[c] += dscore * qa[c];
                    }
                }
            }
        }
    }

    mat_nn(dq.data(), tokens, d, p.wq.data(), d, dx.data(), true);
    mat_nn(dkt.data(), tokens, d, p.wk.data(), d, dx.data(), true);
    mat_nn(dv.data(), tokens, d, p.wv.data(), d, dx.data(), true);
    mat_tn_acc(dq.data(), tokens, d, x.data(), d, g.wq.data());
    mat_tn_acc(dkt.data(), tokens, d, x.data(), d, g.wk.data());
    mat_tn_acc(dv.data(), tokens, d, x.data(), d, g.wv.data());
}

// One transformer block over G groups of R tokens. Layout {G, R, d}.
void block_forward(const Tensor& x, const BlockParams& p, const ModelConfig& cfg,
                   int64_t groups, int64_t r_tokens, BlockWork& w, Tensor& y,
                   Tensor* capture_weights) {
    const int64_t d = cfg.embed_dim;
    const int64_t hidden = cfg.block_hidden();
    const int64_t tokens = groups * r_tokens;

    w.x = x;
    w.attn_out.resize({groups, r_tokens, d});
    w.s1.resize({groups, r_tokens, d});
    w.mlp_in.resize({groups, r_tokens, d});
    w.mlp_pre.resize({groups, r_tokens, hidden});
    w.mlp_act.resize({groups, r_tokens, hidden});
    w.mlp_out.resize({groups, r_tokens, d});
    y.resize({groups, r_tokens, d});

    if (cfg.pre_norm) {
        w.hx.resize({groups, r_tokens, d});
        layernorm_forward(w.x, p.norm1, w.ln1, w.hx);
        attention_forward(w.hx, p.attn, cfg.heads, groups, r_tokens, w.attn, w.attn_out);
        for (int64_t i = 0; i < tokens * d; ++i) w.s1[i] = w.x[i] + w.attn_out[i];
        layernorm_forward(w.s1, p.norm2, w.ln2, w.mlp_in);
    } else {
        attention_forward(w.x, p.attn, cfg.heads, groups, r_tokens, w.attn, w.attn_out);
        for (int64_t i = 0; i < tokens * d; ++i) w.s1[i] = w.x[i] + w.attn_out[i];
        layernorm_forward(w.s1, p.norm1, w.ln1, w.mlp_in);
    }

    linear_forward(w.mlp_in, p.mlp1, w.mlp_pre);
    for (int64_t i = 0; i < tokens * hidden; ++i) w.mlp_act[i] = gelu(w.mlp_pre[i]);
    linear_forward(w.mlp_act, p.mlp2, w.mlp_out);

    if (cfg.pre_norm) {
        for (int64_t i = 0; i < tokens * d; ++i) y[i] = w.s1[i] + w.mlp_out[i];
    } else {
        w.s2.resize({groups, r_tokens, d});
        for (int64_t i = 0; i < tokens * d; ++i) w.s2[i] = w.mlp_in[i] + w.mlp_out[i];
        layernorm_forward(w.s2, p.norm2, w.ln2, y);
    }

    if (capture_weights) *capture_weights = w.attn.weights;
}

void block_backward(const BlockParams& p, const ModelConfig& cfg, int64_t groups,
                    int64_t r_tokens, const BlockWork& w, const Tensor& dy,
                    Tensor& dx, BlockParams& g) {
    const int64_t d = cfg.embed_dim;
    const int64_t hidden = cfg.block_hidden();
    const int64_t tokens = groups * r_tokens;

    Tensor du1({groups, r_tokens, hidden});
    dx.resize({groups, r_tokens, d});

    if (cfg.pre_norm) {
        // y = s1 + mlp(norm2(s1)); s1 = x + attn(norm1(x))
        Tensor ds1 = dy;
        Tensor dmlp_in({groups, r_tokens, d});
        linear_backward(w.mlp_act, p.mlp2, dy, &du1, false, g.mlp2);
        for (int64_t i = 0; i < tokens * hidden; ++i) du1[i] *= gelu_grad(w.mlp_pre[i]);
        linear_backward(w.mlp_in, p.mlp1, du1, &dmlp_in, false, g.mlp1);
        Tensor ds1_norm({groups, r_tokens, d});
        layernorm_backward(p.norm2, w.ln2, dmlp_in, ds1_norm, g.norm2);
        for (int64_t i = 0; i < tokens * d; ++i) ds1[i] += ds1_norm[i];

        dx = ds1;
        Tensor dhx({groups, r_tokens, d});
        dhx.zero();
        attention_backward(w.hx, p.attn, cfg.heads, groups, r_tokens, w.attn, ds1, dhx, g.attn);
        Tensor dx_norm({groups, r_tokens, d});
        layernorm_backward(p.norm1, w.ln1, dhx, dx_norm, g.norm1);
        for (int64_t i = 0; i < tokens * d; ++i) dx[i] += dx_norm[i];
    } else {
        // y = norm2(h + mlp(h)); h = norm1(x + attn(x))
        Tensor ds2({groups, r_tokens, d});
        layernorm_backward(p.norm2, w.ln2, dy, ds2, g.norm2);
        Tensor dh = ds2;
        linear_backward(w.mlp_act, p.mlp2, ds2, &du1, false, g.mlp2);
        for (int64_t i = 0; i < tokens * hidden; ++i) du1[i] *= gelu_grad(w.mlp_pre[i]);
        linear_backward(w.mlp_in, p.mlp1, du1, &dh, true, g.mlp1);
        Tensor ds1({groups, r_tokens, d});
        layernorm_backward(p.norm1, w.ln1, dh, ds1, g.norm1);
        dx = ds1;
        attention_backward(w.x, p.attn, cfg.heads, groups, r_tokens, w.attn, ds1, dx, g.attn);
    }
}

void transpose_blnd_bnld(const Tensor& src, int64_t b, int64_t l, int64_t n, int64_t d, Tensor& dst) {
    dst.resize({b, n, l, d});
    for (int64_t bi = 0; bi < b; ++bi) {
        for (int64_t t = 0; t < l; ++t) {
            for (int64_t j = 0; j < n; ++j) {
                const double* s = src.data() + (((bi * l) + t) * n + j) * d;
                double* o = dst.data() + (((bi * n) + j) * l + t) * d;
                std::memcpy(o, s, sizeof(double) * static_cast<size_t>(d));
            }
        }
    }
}

void transpose_bnld_blnd(const Tensor& src, int64_t b, int64_t l, int64_t n, int64_t d, Tensor& dst) {
    dst.resize({b, l, n, d});
    for (int64_t bi = 0; bi < b; ++bi) {
        for (int64_t j = 0; j < n; ++j) {
            for (int64_t t = 0; t < l; ++t) {
                const double* s = src.data() + (((bi * n) + j) * l + t) * d;
                double* o = dst.data() + (((bi * l) + t) * n + j) * d;
                std::memcpy(o, s, sizeof(double) * static_cast<size_t>(d));
            }
        }
    }
}

// {G, heads, R, R} -> {heads, G, R, R} (the documented record layout).
Tensor capture_record(const Tensor& weights) {
    const int64_t g = weights.dim(0), h = weights.dim(1), r = weights.dim(2);
    Tensor out({h, g, r, r});
    for (int64_t gi = 0; gi < g; ++gi)
        for (int64_t hi = 0; hi < h; ++hi)
            std::memcpy(out.data() + ((hi * g) + gi) * r * r,
                        weights.data() + ((gi * h) + hi) * r * r,
                        sizeof(double) * static_cast<size_t>(r * r));
    return out;
}

void init_linear(Linear& lin, int64_t out, int64_t in, Rng& rng, bool bias = true) {
    lin.w.resize({out, in});
    double bound = std::sqrt(3.0 / static_cast<double>(in));
    for (int64_t i = 0; i < lin.w.size(); ++i) lin.w[i] = rng.uniform(-bound, bound);
    if (bias) {
        lin.b.resize({out});
        lin.b.zero();
    } else {
        lin.b = Tensor();
    }
}

void init_norm(LayerNormParams& p, int64_t d) {
    p.gamma.resize({d});
    p.gamma.fill(1.0);
    p.beta.resize({d});
    p.beta.zero();
}

void init_block(BlockParams& bp, const ModelConfig& cfg, Rng& rng) {
    const int64_t d = cfg.embed_dim;
    auto init_proj = [&](Tensor& t) {
        t.resize({d, d});
        double bound = std::sqrt(3.0 / static_cast<double>(d));
        for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    };
    init_proj(bp.attn.wq);
    init_proj(bp.attn.wk);
    init_proj(bp.attn.wv);
    init_proj(bp.attn.wo);
    init_norm(bp.norm1, d);
    init_linear(bp.mlp1, cfg.block_hidden(), d, rng);
    init_linear(bp.mlp2, d, cfg.block_hidden(), rng);
    init_norm(bp.norm2, d);
}

void init_decoder(DecoderParams& dp, int64_t in, int64_t hidden, int64_t out, Rng& rng) {
    init_linear(dp.l1, hidden, in, rng);
    init_linear(dp.l2, hidden, hidden, rng);
    init_linear(dp.l3, out, hidden, rng);
}

void decoder_forward(const Tensor& input, const DecoderParams& p, int64_t tokens,
                     int64_t out_dim, DecoderWork& w) {
    const int64_t hidden = p.l1.w.dim(0);
    w.p1.resize({tokens, hidden});
    w.h1.resize({tokens, hidden});
    w.p2.resize({tokens, hidden});
    w.h2.resize({tokens, hidden});
    w.out.resize({tokens, out_dim});
    linear_forward(input, p.l1, w.p1);
    for (int64_t i = 0; i < w.p1.size(); ++i) w.h1[i] = gelu(w.p1[i]);
    linear_forward(w.h1, p.l2, w.p2);
    for (int64_t i = 0; i < w.p2.size(); ++i) w.h2[i] = gelu(w.p2[i]);
    linear_forward(w.h2, p.l3, w.out);
}

// Accumulates d(input) into dc.
void decoder_backward(const Tensor& input, const DecoderParams& p, const DecoderWork& w,
                      const Tensor& dout, DecoderParams& g, Tensor& dc) {
    Tensor dh2(w.h2.shape());
    linear_backward(w.h2, p.l3, dout, &dh2, false, g.l3);
    for (int64_t i = 0; i < dh2.size(); ++i) dh2[i] *= gelu_grad(w.p2[i]);
    Tensor dh1(w.h1.shape());
    linear_backward(w.h1, p.l2, dh2, &dh1, false, g.l2);
    for (int64_t i = 0; i < dh1.size(); ++i) dh1[i] *= gelu_grad(w.p1[i]);
    linear_backward(input, p.l1, dh1, &dc, true, g.l1);
}

template <typename Params, typename Fn>
void visit_impl(Params& p, Fn&& f) {
    f("input_embed.w", ParamKind::weight, p.input_embed.w);
    f("input_embed.b", ParamKind::bias, p.input_embed.b);
    f("spatial_pos", ParamKind::positional, p.spatial_pos);
    f("temporal_pos", ParamKind::positional, p.temporal_pos);
    auto visit_block = [&](const std::string& prefix, auto& bp) {
        f(prefix + ".attn.wq", ParamKind::weight, bp.attn.wq);
        f(prefix + ".attn.wk", ParamKind::weight, bp.attn.wk);
        f(prefix + ".attn.wv", ParamKind::weight, bp.attn.wv);
        f(prefix + ".attn.wo", ParamKind::weight, bp.attn.wo);
        f(prefix + ".norm1.gamma", ParamKind::norm, bp.norm1.gamma);
        f(prefix + ".norm1.beta", ParamKind::norm, bp.norm1.beta);
        f(prefix + ".mlp1.w", ParamKind::weight, bp.mlp1.w);
        f(prefix + ".mlp1.b", ParamKind::bias, bp.mlp1.b);
        f(prefix + ".mlp2.w", ParamKind::weight, bp.mlp2.w);
        f(prefix + ".mlp2.b", ParamKind::bias, bp.mlp2.b);
        f(prefix + ".norm2.gamma", ParamKind::norm, bp.norm2.gamma);
        f(prefix + ".norm2.beta", ParamKind::norm, bp.norm2.beta);
    };
    for (size_t m = 0; m < p.spatial.size(); ++m)
        visit_block("spatial." + std::to_string(m), p.spatial[m]);
    for (size_t m = 0; m < p.temporal.size(); ++m)
        visit_block("temporal." + std::to_string(m), p.temporal[m]);
    auto visit_decoder = [&](const std::string& prefix, auto& dp) {
        f(prefix + ".l1.w", ParamKind::weight, dp.l1.w);
        f(prefix + ".l1.b", ParamKind::bias, dp.l1.b);
        f(prefix + ".l2.w", ParamKind::weight, dp.l2.w);
        f(prefix + ".l2.b", ParamKind::bias, dp.l2.b);
        f(prefix + ".l3.w", ParamKind::weight, dp.l3.w);
        f(prefix + ".l3.b", ParamKind::bias, dp.l3.b);
    };
    visit_decoder("dec_mean", p.dec_mean);
    visit_decoder("dec_sigma", p.dec_sigma);
    visit_decoder("dec_sampler", p.dec_sampler);
}

void check_input_shape(const Tensor& x_bar, const ModelConfig& cfg, const char* op) {
    if (x_bar.rank() != 4)
        throw ShapeError(std::string(op) + ": expected rank-4 input b x l x n x 3, got " +
                         x_bar.shape_str());
    if (x_bar.dim(1) != cfg.frames || x_bar.dim(2) != cfg.joints || x_bar.dim(3) != 3)
        throw ShapeError(std::string(op) + ": expected b x " + std::to_string(cfg.frames) +
                         " x " + std::to_string(cfg.joints) + " x 3, got " + x_bar.shape_str());
}

} // namespace

void ModelConfig::validate() const {
    if (joints <= 0 || frames <= 0 || embed_dim <= 0 || layer_pairs <= 0 || heads <= 0)
        throw std::invalid_argument("ModelConfig: all dimensions must be positive");
    if (samples < 2)
        throw std::invalid_argument("ModelConfig: need at least 2 samples for a defined std");
    if (embed_dim % heads != 0)
        throw std::invalid_argument("ModelConfig: embed_dim must be divisible by heads");
    if (mlp_hidden < 0) throw std::invalid_argument("ModelConfig: negative mlp_hidden");
}

ModelConfig ModelConfig::h36m() {
    ModelConfig c;
    c.joints = 16;
    c.frames = 25;
    c.embed_dim = 32;
    c.layer_pairs = 4;
    c.samples = 10;
    c.heads = 4;
    return c;
}

ModelConfig ModelConfig::cmu() {
    ModelConfig c;
    c.joints = 14;
    c.frames = 30;
    c.embed_dim = 32;
    c.layer_pairs = 5;
    c.samples = 10;
    c.heads = 4;
    return c;
}

void visit_parameters(ModelParameters& p,
                      const std::function<void(const std::string&, ParamKind, Tensor&)>& f) {
    visit_impl(p, f);
}

void visit_parameters(const ModelParameters& p,
                      const std::function<void(const std::string&, ParamKind, const Tensor&)>& f) {
    visit_impl(p, f);
}

ModelParameters init_parameters(const ModelConfig& config, uint64_t seed) {
    config.validate();
    ModelParameters p;
    p.config = config;
    Rng rng(seed);
    init_linear(p.input_embed, config.embed_dim, 3, rng);
    p.spatial_pos.resize({config.joints, config.embed_dim});
    for (int64_t i = 0; i < p.spatial_pos.size(); ++i) p.spatial_pos[i] = rng.normal(0.0, 0.02);
    p.temporal_pos.resize({config.frames, config.embed_dim});
    for (int64_t i = 0; i < p.temporal_pos.size(); ++i) p.temporal_pos[i] = rng.normal(0.0, 0.02);
    p.spatial.resize(static_cast<size_t>(config.layer_pairs));
    p.temporal.resize(static_cast<size_t>(config.layer_pairs));
    for (auto& b : p.spatial) init_block(b, config, rng);
    for (auto& b : p.temporal) init_block(b, config, rng);
    const int64_t h = config.decoder_hidden();
    init_decoder(p.dec_mean, config.embed_dim, h, 3, rng);
    init_decoder(p.dec_sigma, config.embed_dim, h, 1, rng);
    init_decoder(p.dec_sampler, config.embed_dim, h, static_cast<int64_t>(config.samples) * 3, rng);
    return p;
}

ModelParameters zeros_like(const ModelParameters& p) {
    ModelParameters z = p;
    visit_parameters(z, [](const std::string&, ParamKind, Tensor& t) { t.zero(); });
    return z;
}

int64_t parameter_count(const ModelParameters& p) {
    int64_t total = 0;
    visit_parameters(p, [&](const std::string&, ParamKind, const Tensor& t) { total += t.size(); });
    return total;
}

Tensor embed_input(const Tensor& x_bar, const ModelParameters& params) {
    check_input_shape(x_bar, params.config, "embed_input");
    const int64_t b = x_bar.dim(0), l = x_bar.dim(1), n = x_bar.dim(2);
    Tensor out({b, l, n, params.config.embed_dim});
    linear_forward(x_bar, params.input_embed, out);
    return out;
}

Tensor self_attention(const Tensor& x, const AttentionParams& p, int heads, Tensor* weights) {
    if (x.rank() != 2 || x.dim(1) != p.wq.dim(0))
        throw ShapeError("self_attention: expected tokens x d input, got " + x.shape_str());
    if (!x.all_finite()) throw NumericError("self_attention: non-finite input");
    AttentionWork w;
    Tensor y({1, x.dim(0), x.dim(1)});
    attention_forward(x, p, heads, 1, x.dim(0), w, y);
    if (weights) {
        *weights = Tensor({static_cast<int64_t>(heads), x.dim(0), x.dim(0)});
        std::memcpy(weights->data(), w.weights.data(),
                    sizeof(double) * static_cast<size_t>(w.weights.size()));
    }
    y.resize({x.dim(0), x.dim(1)});
    return y;
}

Tensor spatial_block(const Tensor& f, const BlockParams& p, const ModelConfig& cfg, Tensor* weights) {
    if (f.rank() != 4 || f.dim(3) != cfg.embed_dim)
        throw ShapeError("spatial_block: expected b x l x n x d input, got " + f.shape_str());
    const int64_t b = f.dim(0), l = f.dim(1), n = f.dim(2), d = f.dim(3);
    BlockWork w;
    Tensor y;
    Tensor cap;
    block_forward(f, p, cfg, b * l, n, w, y, weights ? &cap : nullptr);
    if (weights) *weights = capture_record(cap);
    y.resize({b, l, n, d});
    return y;
}

Tensor temporal_block(const Tensor& f, const BlockParams& p, const ModelConfig& cfg, Tensor* weights) {
    if (f.rank() != 4 || f.dim(3) != cfg.embed_dim)
        throw ShapeError("temporal_block: expected b x l x n x d input, got " + f.shape_str());
    const int64_t b = f.dim(0), l = f.dim(1), n = f.dim(2), d = f.dim(3);
    Tensor tr;
    transpose_blnd_bnld(f, b, l, n, d, tr);
    BlockWork w;
    Tensor y;
    Tensor cap;
    block_forward(tr, p, cfg, b * n, l, w, y, weights ? &cap : nullptr);
    if (weights) *weights = capture_record(cap);
    Tensor out;
    transpose_bnld_blnd(y, b, l, n, d, out);
    return out;
}

namespace {

void encode_with_trace(const Tensor& x_bar, const ModelParameters& params, ForwardTrace& trace,
                       Capture capture, AttentionRecord* record) {
    const ModelConfig& cfg = params.config;
    check_input_shape(x_bar, cfg, "encode");
    if (!x_bar.all_finite()) throw NumericError("encode: non-finite input");
    const int64_t b = x_bar.dim(0), l = cfg.frames, n = cfg.joints, d = cfg.embed_dim;
    const int64_t m_layers = cfg.layer_pairs;

    if (record) {
        record->spatial.clear();
        record->temporal.clear();
        record->has_temporal = (capture == Capture::spatial_and_temporal);
    }

    trace.x_bar = x_bar;
    trace.tokens0.resize({b, l, n, d});
    linear_forward(x_bar, params.input_embed, trace.tokens0);
    // learnable spatial positional embedding, added once
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t t = 0; t < l; ++t)
            for (int64_t j = 0; j < n; ++j) {
                double* row = trace.tokens0.data() + (((bi * l) + t) * n + j) * d;
                const double* pos = params.spatial_pos.data() + j * d;
                for (int64_t c = 0; c < d; ++c) row[c] += pos[c];
            }

    trace.sblocks.resize(static_cast<size_t>(m_layers));
    trace.tblocks.resize(static_cast<size_t>(m_layers));

    Tensor cur = trace.tokens0;
    Tensor y, tr, ty;
    Tensor cap;
    for (int64_t m = 0; m < m_layers; ++m) {
        const bool want_cap = capture != Capture::none;
        block_forward(cur, params.spatial[static_cast<size_t>(m)], cfg, b * l, n,
                      trace.sblocks[static_cast<size_t>(m)], y, want_cap ? &cap : nullptr);
        if (want_cap && record) record->spatial.push_back(capture_record(cap));
        if (m == 0) {
            // learnable temporal positional embedding, added once before the
            // first temporal block
            for (int64_t bi = 0; bi < b; ++bi)
                for (int64_t t = 0; t < l; ++t) {
                    const double* pos = params.temporal_pos.data() + t * d;
                    for (int64_t j = 0; j < n; ++j) {
                        double* row = y.data() + (((bi * l) + t) * n + j) * d;
                        for (int64_t c = 0; c < d; ++c) row[c] += pos[c];
                    }
                }
        }
        transpose_blnd_bnld(y, b, l, n, d, tr);
        const bool want_tcap = capture == Capture::spatial_and_temporal;
        block_forward(tr, params.temporal[static_cast<size_t>(m)], cfg, b * n, l,
                      trace.tblocks[static_cast<size_t>(m)], ty, want_tcap ? &cap : nullptr);
        if (want_tcap && record) record->temporal.push_back(capture_record(cap));
        transpose_bnld_blnd(ty, b, l, n, d, cur);
    }
    trace.latent = cur;
    trace.latent.resize({b, l, n, d});
}

PredictionSet decode_with_trace(const Tensor& c, const ModelParameters& params, DecodeWork& dec) {
    const ModelConfig& cfg = params.config;
    if (c.rank() != 4 || c.dim(1) != cfg.frames || c.dim(2) != cfg.joints || c.dim(3) != cfg.embed_dim)
        throw ShapeError("decode: expected b x l x n x d latent, got " + c.shape_str());
    const int64_t b = c.dim(0), l = cfg.frames, n = cfg.joints;
    const int64_t tokens = b * l * n;
    const int64_t nsamp = cfg.samples;

    decoder_forward(c, params.dec_mean, tokens, 3, dec.mean_w);
    if (!dec.mean_w.out.all_finite()) throw NumericError("decode: mean decoder produced non-finite output");
    decoder_forward(c, params.dec_sigma, tokens, 1, dec.sigma_w);
    if (!dec.sigma_w.out.all_finite()) throw NumericError("decode: variance decoder produced non-finite output");
    decoder_forward(c, params.dec_sampler, tokens, nsamp * 3, dec.sampler_w);
    if (!dec.sampler_w.out.all_finite()) throw NumericError("decode: sampler decoder produced non-finite output");

    PredictionSet pred;
    pred.mu.resize({b, l, n, 3});
    std::memcpy(pred.mu.data(), dec.mean_w.out.data(), sizeof(double) * static_cast<size_t>(tokens * 3));
    pred.sigma.resize({b, l, n, 1});
    dec.sigma_raw.resize({tokens});
    for (int64_t t = 0; t < tokens; ++t) {
        dec.sigma_raw[t] = dec.sigma_w.out[t];
        pred.sigma[t] = softplus(dec.sigma_raw[t]) + kSigmaFloor;
    }
    pred.samples.resize({b, l, n, nsamp, 3});
    std::memcpy(pred.samples.data(), dec.sampler_w.out.data(),
                sizeof(double) * static_cast<size_t>(tokens * nsamp * 3));

    dec.sample_mean.resize({tokens, 3});
    dec.sample_std.resize({tokens, 3});
    dec.clamped.assign(static_cast<size_t>(tokens * 3), 0);
    pred.predictions.resize({b, l, n, nsamp, 3});
    const double inv_n = 1.0 / static_cast<double>(nsamp);
    for (int64_t t = 0; t < tokens; ++t) {
        const double* s = pred.samples.data() + t * nsamp * 3;
        double* xh = pred.predictions.data() + t * nsamp * 3;
        const double* mu = pred.mu.data() + t * 3;
        const double sg = pred.sigma[t];
        for (int64_t ch = 0; ch < 3; ++ch) {
            double mean = 0.0, sq = 0.0;
            for (int64_t i = 0; i < nsamp; ++i) {
                double v = s[i * 3 + ch];
                mean += v;
                sq += v * v;
            }
            mean *= inv_n;
            double var = sq * inv_n - mean * mean;
            double sd = var > 0.0 ? std::sqrt(var) : 0.0;
            bool clamp = sd < kStdClamp;
            if (clamp) sd = kStdClamp;
            dec.sample_mean.at(t, ch) = mean;
            dec.sample_std.at(t, ch) = sd;
            dec.clamped[static_cast<size_t>(t * 3 + ch)] = clamp ? 1 : 0;
            const double ratio = sg / sd;
            for (int64_t i = 0; i < nsamp; ++i) xh[i * 3 + ch] = mu[ch] + ratio * s[i * 3 + ch];
        }
    }
    if (!pred.predictions.all_finite())
        throw NumericError("decode: reparameterization produced non-finite predictions");
    return pred;
}

} // namespace

LatentFeatures encode(const Tensor& x_bar, const ModelParameters& params, Capture capture,
                      AttentionRecord* record) {
    ForwardTrace trace;
    encode_with_trace(x_bar, params, trace, capture, record);
    return LatentFeatures{std::move(trace.latent)};
}

PredictionSet decode(const LatentFeatures& c, const ModelParameters& params) {
    DecodeWork dec;
    return decode_with_trace(c.c, params, dec);
}

PredictionSet forward_with_trace(const Tensor& x_bar, const ModelParameters& params,
                                 ForwardTrace& trace, Capture capture, AttentionRecord* record) {
    encode_with_trace(x_bar, params, trace, capture, record);
    return decode_with_trace(trace.latent, params, trace.dec);
}

PredictionSet forward(const Tensor& x_bar, const ModelParameters& params, Capture capture,
                      AttentionRecord* record) {
    ForwardTrace trace;
    return forward_with_trace(x_bar, params, trace, capture, record);
}

void backward(const ModelParameters& params, const ForwardTrace& trace, const PredictionSet& pred,
              const Tensor& d_predictions, ModelParameters& grads) {
    const ModelConfig& cfg = params.config;
    const int64_t b = trace.x_bar.dim(0), l = cfg.frames, n = cfg.joints, d = cfg.embed_dim;
    const int64_t tokens = b * l * n;
    const int64_t nsamp = cfg.samples;
    if (!d_predictions.same_shape(pred.predictions))
        throw ShapeError("backward: d_predictions shape " + d_predictions.shape_str() +
                         " does not match predictions " + pred.predictions.shape_str());

    // Reparameterization backward: x_hat_i = mu + sigma / sd * S_i with sd the
    // clamped population std over the sample axis.
    Tensor dmu({tokens, 3});
    Tensor dsigma_raw({tokens});
    Tensor dsamples({tokens, nsamp * 3});
    for (int64_t t = 0; t < tokens; ++t) {
        const double* dxh = d_predictions.data() + t * nsamp * 3;
        const double* s = pred.samples.data() + t * nsamp * 3;
        double* ds = dsamples.data() + t * nsamp * 3;
        const double sg = pred.sigma[t];
        double dsg = 0.0;
        for (int64_t ch = 0; ch < 3; ++ch) {
            const double sd = trace.dec.sample_std.at(t, ch);
            const double mean = trace.dec.sample_mean.at(t, ch);
            const bool clamped = trace.dec.clamped[static_cast<size_t>(t * 3 + ch)] != 0;
            double sum_d = 0.0;
            double sum_ds = 0.0; // sum_i dxh_i * S_i
            for (int64_t i = 0; i < nsamp; ++i) {
                sum_d += dxh[i * 3 + ch];
                sum_ds += dxh[i * 3 + ch] * s[i * 3 + ch];
            }
            dmu.at(t, ch) = sum_d;
            dsg += sum_ds / sd;
            const double ratio = sg / sd;
            const double through_std = clamped ? 0.0 : sg * sum_ds / (static_cast<double>(nsamp) * sd * sd * sd);
            for (int64_t i = 0; i < nsamp; ++i) {
                double v = dxh[i * 3 + ch] * ratio;
                if (!clamped) v -= through_std * (s[i * 3 + ch] - mean);
                ds[i * 3 + ch] = v;
            }
        }
        dsigma_raw[t] = dsg * sigmoid(trace.dec.sigma_raw[t]);
    }

    // Decoder backwards accumulate into d(latent).
    Tensor dc({b, l, n, d});
    dc.zero();
    decoder_backward(trace.latent, params.dec_mean, trace.dec.mean_w, dmu, grads.dec_mean, dc);
    Tensor dsig({tokens, 1});
    std::memcpy(dsig.data(), dsigma_raw.data(), sizeof(double) * static_cast<size_t>(tokens));
    decoder_backward(trace.latent, params.dec_sigma, trace.dec.sigma_w, dsig, grads.dec_sigma, dc);
    decoder_backward(trace.latent, params.dec_sampler, trace.dec.sampler_w, dsamples,
                     grads.dec_sampler, dc);

    // Encoder backward through the alternating block stack.
    Tensor dcur = dc;
    Tensor dty, dtr, dy;
    for (int64_t m = cfg.layer_pairs - 1; m >= 0; --m) {
        transpose_blnd_bnld(dcur, b, l, n, d, dty);
        block_backward(params.temporal[static_cast<size_t>(m)], cfg, b * n, l,
                       trace.tblocks[static_cast<size_t>(m)], dty, dtr,
                       grads.temporal[static_cast<size_t>(m)]);
        transpose_bnld_blnd(dtr, b, l, n, d, dy);
        if (m == 0) {
            for (int64_t bi = 0; bi < b; ++bi)
                for (int64_t t = 0; t < l; ++t) {
                    double* gpos = grads.temporal_pos.data() + t * d;
                    for (int64_t j = 0; j < n; ++j) {
                        const double* row = dy.data() + (((bi * l) + t) * n + j) * d;
                        for (int64_t c = 0; c < d; ++c) gpos[c] += row[c];
                    }
                }
        }
        block_backward(params.spatial[static_cast<size_t>(m)], cfg, b * l, n,
                       trace.sblocks[static_cast<size_t>(m)], dy, dcur,
                       grads.spatial[static_cast<size_t>(m)]);
    }

    // Positional and input embedding gradients.
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t t = 0; t < l; ++t)
            for (int64_t j = 0; j < n; ++j) {
                const double* row = dcur.data() + (((bi * l) + t) * n + j) * d;
                double* gpos = grads.spatial_pos.data() + j * d;
                for (int64_t c = 0; c < d; ++c) gpos[c] += row[c];
            }
    linear_backward(trace.x_bar, params.input_embed, dcur, nullptr, false, grads.input_embed);
}

} // namespace aepm
