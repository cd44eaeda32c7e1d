#include <doctest.h>

#include <cmath>
#include <vector>

#include "aepm/errors.hpp"
#include "aepm/model.hpp"
#include "aepm/rng.hpp"

using namespace aepm;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.joints = 3;
    cfg.frames = 4;
    cfg.embed_dim = 8;
    cfg.layer_pairs = 1;
    cfg.samples = 2;
    cfg.heads = 2;
    return cfg;
}

Tensor random_input(const ModelConfig& cfg, int64_t b, uint64_t seed) {
    Tensor x({b, cfg.frames, cfg.joints, 3});
    Rng rng(seed);
    for (int64_t i = 0; i < x.size(); ++i) x[i] = rng.normal(0.0, 1.0);
    return x;
}

// Test-side re-implementations of the block primitives, kept independent of
// the library internals.
double oracle_gelu(double x) { return 0.5 * x * std::erfc(-x / std::sqrt(2.0)); }

std::vector<double> oracle_layernorm(const std::vector<double>& x, const Tensor& gamma,
                                     const Tensor& beta) {
    const size_t d = x.size();
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    double istd = 1.0 / std::sqrt(var + 1e-5);
    std::vector<double> y(d);
    for (size_t i = 0; i < d; ++i) y[i] = gamma[static_cast<int64_t>(i)] * (x[i] - mean) * istd +
                                          beta[static_cast<int64_t>(i)];
    return y;
}

} // namespace

TEST_CASE("init_parameters: deterministic and shaped by the config") {
    ModelConfig cfg = ModelConfig::h36m();
    CHECK(cfg.embed_dim / cfg.heads == 8); // d_k = 8 at d = 32, 4 heads
    ModelParameters a = init_parameters(cfg, 99);
    ModelParameters b = init_parameters(cfg, 99);
    bool identical = true;
    std::vector<const Tensor*> bt;
    visit_parameters(b, [&](const std::string&, ParamKind, const Tensor& t) { bt.push_back(&t); });
    size_t slot = 0;
    visit_parameters(a, [&](const std::string&, ParamKind, const Tensor& t) {
        const Tensor& other = *bt[slot++];
        REQUIRE(t.size() == other.size());
        for (int64_t i = 0; i < t.size(); ++i)
            if (t[i] != other[i]) identical = false;
    });
    CHECK(identical);
    CHECK(a.input_embed.w.dim(0) == 32);
    CHECK(a.input_embed.w.dim(1) == 3);
    CHECK(a.spatial_pos.dim(0) == 16);
    CHECK(a.temporal_pos.dim(0) == 25);
    CHECK(a.spatial.size() == 4);
}

TEST_CASE("init_parameters: fan-in scaling of the input embedding") {
    // empirical std of the 3 -> 32 embedding matrix should track 1/sqrt(3)
    double mean_std = 0.0;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        ModelParameters p = init_parameters(ModelConfig::h36m(), seed);
        const Tensor& w = p.input_embed.w;
        double mean = 0.0;
        for (int64_t i = 0; i < w.size(); ++i) mean += w[i];
        mean /= static_cast<double>(w.size());
        double var = 0.0;
        for (int64_t i = 0; i < w.size(); ++i) var += (w[i] - mean) * (w[i] - mean);
        var /= static_cast<double>(w.size());
        mean_std += std::sqrt(var);
    }
    mean_std /= 10.0;
    const double target = 1.0 / std::sqrt(3.0);
    CHECK(mean_std > 0.8 * target);
    CHECK(mean_std < 1.2 * target);
}

TEST_CASE("init_parameters: invalid configs rejected") {
    ModelConfig cfg = tiny_config();
    cfg.heads = 3; // 8 % 3 != 0
    CHECK_THROWS_AS(init_parameters(cfg, 0), std::invalid_argument);
    cfg = tiny_config();
    cfg.samples = 1;
    CHECK_THROWS_AS(init_parameters(cfg, 0), std::invalid_argument);
    cfg = tiny_config();
    cfg.layer_pairs = 0;
    CHECK_THROWS_AS(init_parameters(cfg, 0), std::invalid_argument);
}

TEST_CASE("embed_input: linearity and a hand-computed product") {
    ModelConfig cfg = tiny_config();
    ModelParameters p = init_parameters(cfg, 5);

    Tensor zero({1, cfg.frames, cfg.joints, 3});
    p.input_embed.b.zero();
    Tensor out = embed_input(zero, p);
    for (int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0);

    Tensor x = random_input(cfg, 1, 3);
    Tensor ax = x;
    for (int64_t i = 0; i < ax.size(); ++i) ax[i] *= 2.5;
    Tensor ex = embed_input(x, p);
    Tensor eax = embed_input(ax, p);
    for (int64_t i = 0; i < ex.size(); ++i)
        CHECK(eax[i] == doctest::Approx(2.5 * ex[i]).epsilon(1e-12));

    // single token, manual 3 -> d multiply
    Rng rng(17);
    for (int64_t i = 0; i < p.input_embed.b.size(); ++i) p.input_embed.b[i] = rng.normal();
    Tensor tok = embed_input(x, p);
    for (int64_t o = 0; o < cfg.embed_dim; ++o) {
        double manual = p.input_embed.b[o];
        for (int64_t c = 0; c < 3; ++c) manual += p.input_embed.w.at(o, c) * x[c];
        CHECK(std::abs(tok[o] - manual) <= 1e-12);
    }

    Tensor bad({1, cfg.frames, cfg.joints + 1, 3});
    CHECK_THROWS_AS(embed_input(bad, p), ShapeError);
}

TEST_CASE("self_attention: single token reduces to the output projection of V") {
    ModelConfig cfg = tiny_config();
    ModelParameters p = init_parameters(cfg, 8);
    const AttentionParams& ap = p.spatial[0].attn;
    Tensor x({1, cfg.embed_dim});
    Rng rng(4);
    for (int64_t i = 0; i < x.size(); ++i) x[i] = rng.normal();

    Tensor weights;
    Tensor y = self_attention(x, ap, cfg.heads, &weights);
    REQUIRE(weights.size() == cfg.heads);
    for (int64_t i = 0; i < weights.size(); ++i) CHECK(weights[i] == doctest::Approx(1.0));

    // manual: v = x * Wv^T, out = v * Wo^T
    std::vector<double> v(static_cast<size_t>(cfg.embed_dim), 0.0);
    for (int64_t o = 0; o < cfg.embed_dim; ++o)
        for (int64_t i = 0; i < cfg.embed_dim; ++i) v[static_cast<size_t>(o)] += x[i] * ap.wv.at(o, i);
    for (int64_t o = 0; o < cfg.embed_dim; ++o) {
        double manual = 0.0;
        for (int64_t i = 0; i < cfg.embed_dim; ++i) manual += v[static_cast<size_t>(i)] * ap.wo.at(o, i);
        CHECK(std::abs(y[o] - manual) <= 1e-12);
    }
}

TEST_CASE("self_attention: two tokens, one head, hand-worked oracle") {
    AttentionParams ap;
    ap.wq.resize({2, 2});
    ap.wk.resize({2, 2});
    ap.wv.resize({2, 2});
    ap.wo.resize({2, 2});
    const double wq[4] = {0.3, -0.1, 0.7, 0.2};
    const double wk[4] = {-0.4, 0.6, 0.1, 0.5};
    const double wv[4] = {0.9, -0.2, 0.3, 0.8};
    const double wo[4] = {1.0, 0.0, -0.5, 0.25};
    for (int i = 0; i < 4; ++i) {
        ap.wq[i] = wq[i];
        ap.wk[i] = wk[i];
        ap.wv[i] = wv[i];
        ap.wo[i] = wo[i];
    }
    Tensor x({2, 2});
    x[0] = 0.5;
    x[1] = -1.0;
    x[2] = 1.5;
    x[3] = 0.25;

    // scalar-by-scalar oracle
    double q[2][2], k[2][2], v[2][2];
    for (int t = 0; t < 2; ++t)
        for (int o = 0; o < 2; ++o) {
            q[t][o] = x[t * 2] * wq[o * 2] + x[t * 2 + 1] * wq[o * 2 + 1];
            k[t][o] = x[t * 2] * wk[o * 2] + x[t * 2 + 1] * wk[o * 2 + 1];
            v[t][o] = x[t * 2] * wv[o * 2] + x[t * 2 + 1] * wv[o * 2 + 1];
        }
    const double scale = 1.0 / std::sqrt(2.0);
    double w_oracle[2][2], ctx[2][2], out_oracle[2][2];
    for (int a = 0; a < 2; ++a) {
        double s0 = (q[a][0] * k[0][0] + q[a][1] * k[0][1]) * scale;
        double s1 = (q[a][0] * k[1][0] + q[a][1] * k[1][1]) * scale;
        double m = std::max(s0, s1);
        double e0 = std::exp(s0 - m), e1 = std::exp(s1 - m);
        w_oracle[a][0] = e0 / (e0 + e1);
        w_oracle[a][1] = e1 / (e0 + e1);
        for (int o = 0; o < 2; ++o) ctx[a][o] = w_oracle[a][0] * v[0][o] + w_oracle[a][1] * v[1][o];
        for (int o = 0; o < 2; ++o) out_oracle[a][o] = ctx[a][0] * wo[o * 2] + ctx[a][1] * wo[o * 2 + 1];
    }

    Tensor weights;
    Tensor y = self_attention(x, ap, 1, &weights);
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
            CHECK(std::abs(weights.at(0, a, b) - w_oracle[a][b]) <= 1e-10);
    for (int a = 0; a < 2; ++a)
        for (int o = 0; o < 2; ++o) CHECK(std::abs(y.at(a, o) - out_oracle[a][o]) <= 1e-10);
}

TEST_CASE("self_attention: captured rows are softmax-normalized") {
    ModelConfig cfg = tiny_config();
    ModelParameters p = init_parameters(cfg, 21);
    Tensor x({5, cfg.embed_dim});
    Rng rng(33);
    for (int64_t i = 0; i < x.size(); ++i) x[i] = rng.normal(0.0, 2.0);
    Tensor weights;
    self_attention(x, p.spatial[0].attn, cfg.heads, &weights);
    for (int h = 0; h < cfg.heads; ++h)
        for (int64_t a = 0; a < 5; ++a) {
            double sum = 0.0;
            for (int64_t b = 0; b < 5; ++b) {
                double w = weights.at(h, a, b);
                CHECK(w >= 0.0);
                CHECK(w <= 1.0);
                sum += w;
            }
            CHECK(std::abs(sum - 1.0) <= 1e-6);
        }

    Tensor bad({2, cfg.embed_dim});
    bad[0] = std::nan("");
    CHECK_THROWS_AS(self_attention(bad, p.spatial[0].attn, cfg.heads), NumericError);
}

TEST_CASE("spatial_block: b=l=1 matches an independently composed block") {
    ModelConfig cfg = tiny_config();
    ModelParameters p = init_parameters(cfg, 12);
    const BlockParams& bp = p.spatial[0];
    const int64_t n = cfg.joints, d = cfg.embed_dim;

    Tensor f({1, 1, n, d});
    Rng rng(9);
    for (int64_t i = 0; i < f.size(); ++i) f[i] = rng.normal();
    ModelConfig cfg1 = cfg;
    cfg1.frames = 1;
    Tensor y = spatial_block(f, bp, cfg1);

    // oracle: attention sub-block + mlp sub-block with post-norm residuals
    Tensor tokens({n, d});
    for (int64_t i = 0; i < tokens.size(); ++i) tokens[i] = f[i];
    Tensor attn = self_attention(tokens, bp.attn, cfg.heads);
    Tensor expect({1, 1, n, d});
    for (int64_t t = 0; t < n; ++t) {
        std::vector<double> s1(static_cast<size_t>(d));
        for (int64_t c = 0; c < d; ++c) s1[static_cast<size_t>(c)] = tokens.at(t, c) + attn.at(t, c);
        auto h = oracle_layernorm(s1, bp.norm1.gamma, bp.norm1.beta);
        const int64_t hidden = cfg.block_hidden();
        std::vector<double> act(static_cast<size_t>(hidden));
        for (int64_t o = 0; o < hidden; ++o) {
            double acc = bp.mlp1.b[o];
            for (int64_t c = 0; c < d; ++c) acc += bp.mlp1.w.at(o, c) * h[static_cast<size_t>(c)];
            act[static_cast<size_t>(o)] = oracle_gelu(acc);
        }
        std::vector<double> s2(static_cast<size_t>(d));
        for (int64_t o = 0; o < d; ++o) {
            double acc = bp.mlp2.b[o];
            for (int64_t c = 0; c < hidden; ++c) acc += bp.mlp2.w.at(o, c) * act[static_cast<size_t>(c)];
            s2[static_cast<size_t>(o)] = h[static_cast<size_t>(o)] + acc;
        }
        auto yt = oracle_layernorm(s2, bp.norm2.gamma, bp.norm2.beta);
        for (int64_t c = 0; c < d; ++c) expect.at(0, 0, t, c) = yt[static_cast<size_t>(c)];
    }
    for (int64_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(expect[i]).epsilon(1e-10));
}

TEST_CASE("spatial_block: shape preserved and batch rows independent") {
    ModelConfig cfg = tiny_config();
    ModelParameters p = init_parameters(cfg, 14);
    Tensor f({2, cfg.frames, cfg.joints, cfg.embed_dim});
    Rng rng(15);
    for (int64_t i = 0; i < f.size(); ++i) f[i] = rng.normal();
    Tensor y = spatial_block(f, p.spatial[0], cfg);
    CHECK(y.shape() == f.shape());

    // perturb batch row 1, row 0 output must not move
    Tensor f2 = f;
    const int64_t half = f.size() / 2;
    for (int64_t i = half; i < f.size(); ++i) f2[i] += 3.0;
    Tensor y2 = spatial_block(f2, p.spatial[0], cfg);
    for (int64_t i = 0; i < half; ++i) CHECK(y2[i] == y[i]);

    // frames are independent slices too: perturbing frame 1 leaves frame 0 alone
    Tensor f3 = f;
    for (int64_t j = 0; j < cfg.joints; ++j)
        for (int64_t c = 0; c < cfg.embed_dim; ++c) f3.at(0, 1, j, c) -= 1.5;
    Tensor y3 = spatial_block(f3, p.spatial[0], cfg);
    for (int64_t j = 0; j < cfg.joints; ++j)
        for (int64_t c = 0; c < cfg.embed_dim; ++c) CHECK(y3.at(0, 0, j, c) == y.at(0, 0, j, c));
}

TEST_CASE("temporal_block: b=n=1 equals attention over the frame tokens") {
    ModelConfig cfg = tiny_config();
    ModelParameters p = init_parameters(cfg, 30);
    ModelConfig cfg1 = cfg;
    cfg1.joints = 1;
    Tensor f({1, cfg.frames, 1, cfg.embed_dim});
    Rng rng(31);
    for (int64_t i = 0; i < f.size(); ++i) f[i] = rng.normal();

    Tensor yt = temporal_block(f, p.temporal[0], cfg1);
    // same data viewed as a spatial problem over l "joints"
    Tensor g({1, 1, cfg.frames, cfg.embed_dim});
    for (int64_t i = 0; i < f.size(); ++i) g[i] = f[i];
    ModelConfig cfg_s = cfg;
    cfg_s.frames = 1;
    cfg_s.joints = cfg.frames;
    Tensor ys = spatial_block(g, p.temporal[0], cfg_s);
    for (int64_t i = 0; i < yt.size(); ++i) CHECK(yt[i] == doctest::Approx(ys[i]).epsilon(1e-12));
}

TEST_CASE("temporal_block: joints evolve independently") {
    ModelConfig cfg = tiny_config();
    ModelParameters p = init_parameters(cfg, 18);
    Tensor f({1, cfg.frames, cfg.joints, cfg.embed_dim});
    Rng rng(19);
    for (int64_t i = 0; i < f.size(); ++i) f[i] = rng.normal();
    Tensor y = temporal_block(f, p.temporal[0], cfg);
    CHECK(y.shape() == f.shape());

    Tensor f2 = f;
    for (int64_t t = 0; t < cfg.frames; ++t)
        for (int64_t c = 0; c < cfg.embed_dim; ++c) f2.at(0, t, 1, c) += 2.0; // alter joint 1
    Tensor y2 = temporal_block(f2, p.temporal[0], cfg);
    for (int64_t t = 0; t < cfg.frames; ++t)
        for (int64_t c = 0; c < cfg.embed_dim; ++c) {
            CHECK(y2.at(0, t, 0, c) == y.at(0, t, 0, c));
            CHECK(y2.at(0, t, 2, c) == y.at(0, t, 2, c));
        }
}

TEST_CASE("encode: shape, determinism, per-layer capture") {
    ModelConfig cfg = tiny_config();
    cfg.layer_pairs = 4;
    ModelParameters p = init_parameters(cfg, 40);
    Tensor x = random_input(cfg, 2, 41);
    AttentionRecord rec;
    LatentFeatures c1 = encode(x, p, Capture::spatial_and_temporal, &rec);
    LatentFeatures c2 = encode(x, p);
    CHECK(c1.c.shape() == std::vector<int64_t>{2, cfg.frames, cfg.joints, cfg.embed_dim});
    for (int64_t i = 0; i < c1.c.size(); ++i) CHECK(c1.c[i] == c2.c[i]);
    // four spatial weight maps, one per layer, as in the four-layer analysis
    CHECK(rec.spatial.size() == 4);
    CHECK(rec.temporal.size() == 4);
    CHECK(rec.has_temporal);
    CHECK(rec.spatial[0].shape() ==
          std::vector<int64_t>{cfg.heads, 2 * cfg.frames, cfg.joints, cfg.joints});
    CHECK(rec.temporal[0].shape() ==
          std::vector<int64_t>{cfg.heads, 2 * cfg.joints, cfg.frames, cfg.frames});
}

TEST_CASE("decode: reparameterization identities") {
    ModelConfig cfg = tiny_config();
    cfg.samples = 6;
    ModelParameters p = init_parameters(cfg, 50);
    Tensor x = random_input(cfg, 2, 51);
    PredictionSet pred = forward(x, p);

    const int64_t tokens = pred.mu.size() / 3;
    const int64_t nsamp = cfg.samples;
    for (int64_t t = 0; t < tokens; ++t) {
        CHECK(pred.sigma[t] > 0.0);
        for (int64_t c = 0; c < 3; ++c) {
            double mean_s = 0.0, sq_s = 0.0;
            double mean_x = 0.0, sq_x = 0.0;
            for (int64_t i = 0; i < nsamp; ++i) {
                double s = pred.samples[(t * nsamp + i) * 3 + c];
                double xh = pred.predictions[(t * nsamp + i) * 3 + c];
                mean_s += s;
                sq_s += s * s;
                mean_x += xh;
                sq_x += xh * xh;
            }
            mean_s /= static_cast<double>(nsamp);
            mean_x /= static_cast<double>(nsamp);
            double std_s = std::sqrt(std::max(0.0, sq_s / static_cast<double>(nsamp) - mean_s * mean_s));
            double std_x = std::sqrt(std::max(0.0, sq_x / static_cast<double>(nsamp) - mean_x * mean_x));
            if (std_s > 1e-8) {
                // std over the sample axis of x_hat equals sigma
                CHECK(std::abs(std_x - pred.sigma[t]) <= 1e-5 * pred.sigma[t]);
                // mean over samples of x_hat equals mu + sigma * mean(S) / std(S)
                double expected = pred.mu[t * 3 + c] + pred.sigma[t] * mean_s / std_s;
                CHECK(std::abs(mean_x - expected) <= 1e-6 * std::max(1.0, std::abs(expected)));
            }
        }
    }
}

TEST_CASE("decode: degenerate equal samples hit the std clamp but stay finite") {
    ModelConfig cfg = tiny_config();
    ModelParameters p = init_parameters(cfg, 60);
    // force the sampler to emit the same value for every sample index
    p.dec_sampler.l3.w.zero();
    for (int64_t i = 0; i < cfg.samples; ++i)
        for (int64_t c = 0; c < 3; ++c) p.dec_sampler.l3.b[i * 3 + c] = 0.75;
    Tensor x = random_input(cfg, 1, 61);
    PredictionSet pred = forward(x, p);
    CHECK(pred.predictions.all_finite());
    // clamp path: x_hat = mu + (sigma / 1e-8) * S, so spread across samples is 0
    const int64_t tokens = pred.mu.size() / 3;
    for (int64_t t = 0; t < tokens; ++t)
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t i = 1; i < cfg.samples; ++i)
                CHECK(pred.predictions[(t * cfg.samples + i) * 3 + c] ==
                      pred.predictions[(t * cfg.samples) * 3 + c]);
}

TEST_CASE("forward: published configurations produce the documented shapes") {
    ModelParameters h36m = init_parameters(ModelConfig::h36m(), 1);
    Tensor xh = random_input(h36m.config, 2, 2);
    PredictionSet ph = forward(xh, h36m);
    CHECK(ph.predictions.shape() == std::vector<int64_t>{2, 25, 16, 10, 3});
    CHECK(ph.sigma.shape() == std::vector<int64_t>{2, 25, 16, 1});

    ModelParameters cmu = init_parameters(ModelConfig::cmu(), 3);
    Tensor xc = random_input(cmu.config, 1, 4);
    PredictionSet pc = forward(xc, cmu);
    CHECK(pc.predictions.shape() == std::vector<int64_t>{1, 30, 14, 10, 3});

    ModelParameters tiny = init_parameters(tiny_config(), 5);
    Tensor xt = random_input(tiny.config, 1, 6);
    PredictionSet pt = forward(xt, tiny);
    CHECK(pt.predictions.all_finite());
    CHECK(pt.mu.all_finite());
    CHECK(pt.sigma.all_finite());
}

TEST_CASE("forward: pre-norm variant runs and differs from post-norm") {
    ModelConfig cfg = tiny_config();
    ModelParameters post = init_parameters(cfg, 70);
    cfg.pre_norm = true;
    ModelParameters pre = init_parameters(cfg, 70);
    Tensor x = random_input(cfg, 1, 71);
    PredictionSet a = forward(x, post);
    PredictionSet b = forward(x, pre);
    CHECK(b.predictions.all_finite());
    bool differs = false;
    for (int64_t i = 0; i < a.mu.size(); ++i)
        if (a.mu[i] != b.mu[i]) differs = true;
    CHECK(differs);
}
