#include "enerbridge/predictor.hpp"

#include <cmath>
#include <string>

#include "enerbridge/errors.hpp"
#include "enerbridge/rng.hpp"

namespace enerbridge {

namespace {

using std::size_t;

Matrix table(int rows, int cols) { return Matrix(static_cast<size_t>(rows), static_cast<size_t>(cols)); }

void fill_uniform(Matrix& m, double fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(fan_in);
    for (double& v : m.flat()) v = rng.uniform(-bound, bound);
}

// out[0..n) += a[0..m) * W (m x n)
void add_row_times(std::span<const double> a, const Matrix& W, std::span<double> out) {
    const size_t n = W.cols();
    for (size_t r = 0; r < a.size(); ++r) {
        const double ar = a[r];
        if (ar == 0.0) continue;
        const double* w = W.row(r).data();
        for (size_t c = 0; c < n; ++c) out[c] += ar * w[c];
    }
}

// out[0..m) += g[0..n) * W^T (W is m x n)
void add_row_times_transpose(std::span<const double> g, const Matrix& W, std::span<double> out) {
    for (size_t r = 0; r < W.rows(); ++r) {
        const double* w = W.row(r).data();
        double acc = 0.0;
        for (size_t c = 0; c < g.size(); ++c) acc += g[c] * w[c];
        out[r] += acc;
    }
}

// G += a^T g (outer product)
void add_outer(std::span<const double> a, std::span<const double> g, Matrix& G) {
    for (size_t r = 0; r < a.size(); ++r) {
        const double ar = a[r];
        if (ar == 0.0) continue;
        double* out = G.row(r).data();
        for (size_t c = 0; c < g.size(); ++c) out[c] += ar * g[c];
    }
}

void check_inputs(const PredictorParams& params, const Sequence& z, const StructureContext& structure, int t) {
    const auto& dims = params.dims;
    if (z.length() != structure.length()) throw ShapeError("sequence length does not match structure");
    if (z.alphabet_size() != dims.K) throw ShapeError("sequence alphabet does not match predictor");
    if (structure.feature_width() != dims.f) throw ShapeError("structure feature width does not match predictor");
    if (t < 0 || t >= dims.T) throw DomainError("predictor timestep " + std::to_string(t) + " out of range");
}

}  // namespace

PredictorParams PredictorParams::zeros(const PredictorDims& dims) {
    if (dims.K < 1 || dims.d < 1 || dims.T < 1 || dims.f < 1) throw ConfigError("predictor dimensions must be positive");
    PredictorParams p;
    p.dims = dims;
    p.token_embed = table(dims.K, dims.d);
    p.time_embed = table(dims.T, dims.d);
    p.feature_proj = table(dims.f, dims.d);
    p.agg_in = table(dims.d, dims.d);
    p.agg_out = table(dims.d, dims.d);
    p.agg_bias = table(1, dims.d);
    p.head = table(dims.d, dims.K);
    p.head_bias = table(1, dims.K);
    return p;
}

void PredictorParams::validate() const {
    const PredictorParams expect = zeros(dims);
    std::vector<const Matrix*> mine;
    for_each([&](const char*, const Matrix& m) { mine.push_back(&m); });
    size_t k = 0;
    expect.for_each([&](const char* name, const Matrix& m) {
        if (!m.same_shape(*mine[k])) throw ShapeError(std::string("parameter table '") + name + "' has the wrong shape");
        for (double v : mine[k]->flat()) {
            if (!std::isfinite(v)) throw NumericalError(std::string("non-finite entry in '") + name + "'");
        }
        ++k;
    });
}

size_t PredictorParams::parameter_count() const {
    size_t n = 0;
    for_each([&](const char*, const Matrix& m) { n += m.size(); });
    return n;
}

PredictorParams init_params(std::uint64_t seed, int d, int K, int T, int f) {
    if (d < 1 || K < 1 || T < 1 || f < 1) throw ConfigError("predictor dimensions must be positive");
    PredictorParams p = PredictorParams::zeros({K, d, T, f});
    Rng rng(seed, 0x696e6974);
    fill_uniform(p.token_embed, K, rng);
    fill_uniform(p.time_embed, T, rng);
    fill_uniform(p.feature_proj, f, rng);
    fill_uniform(p.agg_in, d, rng);
    fill_uniform(p.agg_out, d, rng);
    fill_uniform(p.agg_bias, d, rng);
    fill_uniform(p.head, d, rng);
    fill_uniform(p.head_bias, d, rng);
    return p;
}

Matrix predict(const PredictorParams& params, const Sequence& z, const StructureContext& structure, int t,
               ForwardCache* cache) {
    check_inputs(params, z, structure, t);
    const auto L = static_cast<size_t>(structure.length());
    const auto d = static_cast<size_t>(params.dims.d);
    const auto K = static_cast<size_t>(params.dims.K);
    const Matrix& feats = structure.features();

    Matrix h0(L, d);
    for (size_t i = 0; i < L; ++i) {
        auto row = h0.row(i);
        const auto tok = params.token_embed.row(static_cast<size_t>(z[i]));
        const auto tim = params.time_embed.row(static_cast<size_t>(t));
        for (size_t c = 0; c < d; ++c) row[c] = tok[c] + tim[c];
        add_row_times(feats.row(i), params.feature_proj, row);
    }

    // The sum commutes with the linear map, so aggregate h0 first.
    Matrix pooled_in(L, d);
    Matrix h = h0;
    std::vector<double> pooled(d);
    for (size_t i = 0; i < L; ++i) {
        const auto& nbrs = structure.neighbors(static_cast<int>(i));
        if (nbrs.empty()) continue;
        std::fill(pooled.begin(), pooled.end(), 0.0);
        for (int j : nbrs) {
            const auto src = h0.row(static_cast<size_t>(j));
            for (size_t c = 0; c < d; ++c) pooled[c] += src[c];
        }
        auto m = pooled_in.row(i);
        add_row_times(pooled, params.agg_in, m);
        auto hi = h.row(i);
        add_row_times(m, params.agg_out, hi);
        for (size_t c = 0; c < d; ++c) hi[c] += params.agg_bias(0, c);
    }

    Matrix probs(L, K);
    for (size_t i = 0; i < L; ++i) {
        auto out = probs.row(i);
        for (size_t k = 0; k < K; ++k) out[k] = params.head_bias(0, k);
        add_row_times(h.row(i), params.head, out);
        double mx = out[0];
        for (size_t k = 1; k < K; ++k) mx = std::max(mx, out[k]);
        double total = 0.0;
        for (size_t k = 0; k < K; ++k) total += (out[k] = std::exp(out[k] - mx));
        for (size_t k = 0; k < K; ++k) out[k] /= total;
    }

    if (cache) {
        cache->structure = &structure;
        cache->tokens = z.tokens();
        cache->t = t;
        cache->h0 = std::move(h0);
        cache->pooled = std::move(pooled_in);
        cache->h = std::move(h);
        cache->probs = probs;
    }
    return probs;
}

Matrix softmax_backward(const Matrix& probs, const Matrix& dprobs) {
    Matrix dlogits(probs.rows(), probs.cols());
    for (size_t i = 0; i < probs.rows(); ++i) {
        const auto p = probs.row(i);
        const auto g = dprobs.row(i);
        double dot = 0.0;
        for (size_t k = 0; k < p.size(); ++k) dot += p[k] * g[k];
        auto out = dlogits.row(i);
        for (size_t k = 0; k < p.size(); ++k) out[k] = p[k] * (g[k] - dot);
    }
    return dlogits;
}

void backward(const PredictorParams& params, const ForwardCache& cache, const Matrix& dlogits, GradientBundle& grads) {
    const StructureContext& structure = *cache.structure;
    const auto L = static_cast<size_t>(structure.length());
    const auto d = static_cast<size_t>(params.dims.d);
    if (dlogits.rows() != L || dlogits.cols() != static_cast<size_t>(params.dims.K)) {
        throw ShapeError("dlogits shape mismatch");
    }

    // Head.
    Matrix dh(L, d);
    for (size_t i = 0; i < L; ++i) {
        const auto g = dlogits.row(i);
        add_outer(cache.h.row(i), g, grads.head);
        for (size_t k = 0; k < g.size(); ++k) grads.head_bias(0, k) += g[k];
        add_row_times_transpose(g, params.head, dh.row(i));
    }

    // Aggregation: h_i = h0_i + (sum_j h0_j) agg_in agg_out + agg_bias.
    Matrix dh0 = dh;
    Matrix dpooled(L, d);  // gradient w.r.t. sum_j h0_j, per receiving position
    std::vector<double> dm(d), pooled(d);
    for (size_t i = 0; i < L; ++i) {
        const auto& nbrs = structure.neighbors(static_cast<int>(i));
        if (nbrs.empty()) continue;
        const auto g = dh.row(i);
        add_outer(cache.pooled.row(i), g, grads.agg_out);
        for (size_t c = 0; c < d; ++c) grads.agg_bias(0, c) += g[c];
        std::fill(dm.begin(), dm.end(), 0.0);
        add_row_times_transpose(g, params.agg_out, dm);

        std::fill(pooled.begin(), pooled.end(), 0.0);
        for (int j : nbrs) {
            const auto src = cache.h0.row(static_cast<size_t>(j));
            for (size_t c = 0; c < d; ++c) pooled[c] += src[c];
        }
        add_outer(pooled, dm, grads.agg_in);
        auto dp = dpooled.row(i);
        add_row_times_transpose(dm, params.agg_in, dp);
        for (int j : nbrs) {
            auto dst = dh0.row(static_cast<size_t>(j));
            for (size_t c = 0; c < d; ++c) dst[c] += dp[c];
        }
    }

    // Embeddings and feature projection.
    const Matrix& feats = structure.features();
    auto dtime = grads.time_embed.row(static_cast<size_t>(cache.t));
    for (size_t i = 0; i < L; ++i) {
        const auto g = dh0.row(i);
        auto dtok = grads.token_embed.row(static_cast<size_t>(cache.tokens[i]));
        for (size_t c = 0; c < d; ++c) {
            dtok[c] += g[c];
            dtime[c] += g[c];
        }
        add_outer(feats.row(i), g, grads.feature_proj);
    }
}

GradientBundle grad(const LossEvaluator& loss, const PredictorParams& params) {
    GradientBundle g = GradientBundle::zeros(params.dims);
    const double value = loss(params, &g);
    if (!std::isfinite(value)) throw NumericalError("loss is not finite");
    g.for_each([](const char* name, const Matrix& m) {
        for (double v : m.flat()) {
            if (!std::isfinite(v)) throw NumericalError(std::string("non-finite gradient in '") + name + "'");
        }
    });
    return g;
}

PriorHeadParams init_prior_head(std::uint64_t seed, int f, int K) {
    if (f < 1 || K < 1) throw ConfigError("prior head dimensions must be positive");
    PriorHeadParams p{table(f, K), table(1, K)};
    Rng rng(seed, 0x70726872);
    fill_uniform(p.weight, f, rng);
    fill_uniform(p.bias, f, rng);
    return p;
}

Matrix prior_logits(const PriorHeadParams& prior, const StructureContext& structure) {
    if (static_cast<size_t>(structure.feature_width()) != prior.weight.rows()) {
        throw ShapeError("structure feature width does not match prior head");
    }
    const auto L = static_cast<size_t>(structure.length());
    Matrix logits(L, prior.weight.cols());
    for (size_t i = 0; i < L; ++i) {
        auto out = logits.row(i);
        for (size_t k = 0; k < out.size(); ++k) out[k] = prior.bias(0, k);
        add_row_times(structure.features().row(i), prior.weight, out);
    }
    return logits;
}

Sequence prior_encode(const PriorHeadParams& prior, const StructureContext& structure) {
    const Matrix logits = prior_logits(prior, structure);
    std::vector<Token> tokens(logits.rows());
    for (size_t i = 0; i < logits.rows(); ++i) {
        const auto row = logits.row(i);
        size_t best = 0;
        for (size_t k = 1; k < row.size(); ++k) {
            if (row[k] > row[best]) best = k;
        }
        tokens[i] = static_cast<Token>(best);
    }
    return Sequence(std::move(tokens), static_cast<int>(logits.cols()));
}

}  // namespace enerbridge
