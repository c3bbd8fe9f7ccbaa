#pragma once

// Desk-scale sequence predictor phi(z_t, S, t):
//
//   h0_i   = token_embed[z_i] + time_embed[t] + features_i * feature_proj
//   m_i    = sum_{j in N(i)} h0_j * agg_in                 (positions with contacts)
//   h_i    = h0_i + m_i * agg_out + agg_bias               (h0_i when N(i) is empty)
//   phi_i  = softmax(h_i * head + head_bias)
//
// Gradients are exact reverse mode through this graph; see backward().

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "enerbridge/bridge.hpp"
#include "enerbridge/structure.hpp"
#include "enerbridge/tensor.hpp"

namespace enerbridge {

struct PredictorDims {
    int K = 20;  // alphabet
    int d = 32;  // hidden width
    int T = 25;  // timesteps
    int f = 11;  // structure feature width

    friend bool operator==(const PredictorDims&, const PredictorDims&) = default;
};

struct PredictorParams {
    PredictorDims dims;
    Matrix token_embed;   // K x d
    Matrix time_embed;    // T x d
    Matrix feature_proj;  // f x d
    Matrix agg_in;        // d x d
    Matrix agg_out;       // d x d
    Matrix agg_bias;      // 1 x d
    Matrix head;          // d x K
    Matrix head_bias;     // 1 x K

    /// All-zero tables with the given shape header.
    static PredictorParams zeros(const PredictorDims& dims);

    /// Visits (name, table) in a fixed order. Serialization, hashing and the
    /// optimizer all rely on this order.
    template <class Self, class F>
    static void visit(Self& self, F&& fn) {
        fn("token_embed", self.token_embed);
        fn("time_embed", self.time_embed);
        fn("feature_proj", self.feature_proj);
        fn("agg_in", self.agg_in);
        fn("agg_out", self.agg_out);
        fn("agg_bias", self.agg_bias);
        fn("head", self.head);
        fn("head_bias", self.head_bias);
    }
    template <class F>
    void for_each(F&& fn) { visit(*this, fn); }
    template <class F>
    void for_each(F&& fn) const { visit(*this, fn); }

    /// Throws ShapeError when a table disagrees with the header, NumericalError
    /// on any non-finite entry.
    void validate() const;
    std::size_t parameter_count() const;

    friend bool operator==(const PredictorParams&, const PredictorParams&) = default;
};

/// Gradients share the parameter layout table for table.
using GradientBundle = PredictorParams;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per table; deterministic per seed.
PredictorParams init_params(std::uint64_t seed, int d, int K, int T, int f);

/// Intermediates kept by predict() for backward().
struct ForwardCache {
    const StructureContext* structure = nullptr;
    std::vector<Token> tokens;
    int t = 0;
    Matrix h0;     // L x d
    Matrix pooled;  // L x d, sum of h0 * agg_in over neighbors
    Matrix h;      // L x d
    Matrix probs;  // L x K
};

/// L x K row-stochastic matrix. Fills `cache` when given.
Matrix predict(const PredictorParams& params, const Sequence& z, const StructureContext& structure, int t,
               ForwardCache* cache = nullptr);

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logits).
void backward(const PredictorParams& params, const ForwardCache& cache, const Matrix& dlogits, GradientBundle& grads);

/// d(loss)/d(logits) from d(loss)/d(probs) through the row softmax.
Matrix softmax_backward(const Matrix& probs, const Matrix& dprobs);

/// Scalar loss whose evaluation also accumulates its gradient when the bundle
/// pointer is non-null.
using LossEvaluator = std::function<double(const PredictorParams&, GradientBundle*)>;

/// Reverse-mode gradient of `loss`. Throws NumericalError on a non-finite loss
/// or gradient.
GradientBundle grad(const LossEvaluator& loss, const PredictorParams& params);

// ---------------------------------------------------------------------------
// Structure-derived prior X = E(S).

struct PriorHeadParams {
    Matrix weight;  // f x K
    Matrix bias;    // 1 x K

    friend bool operator==(const PriorHeadParams&, const PriorHeadParams&) = default;
};

PriorHeadParams init_prior_head(std::uint64_t seed, int f, int K);
Matrix prior_logits(const PriorHeadParams& prior, const StructureContext& structure);
/// Per-position argmax; ties go to the lowest token index.
Sequence prior_encode(const PriorHeadParams& prior, const StructureContext& structure);

}  // namespace enerbridge
