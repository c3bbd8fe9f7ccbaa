#include "enerbridge/objectives.hpp"

#include <cmath>

#include "enerbridge/errors.hpp"
#include "enerbridge/rng.hpp"

namespace enerbridge {

namespace {

using std::size_t;

void require_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw NumericalError(std::string(what) + " is not finite");
}

double clamped_log(double p) { return std::max(std::log(p), kLogProbFloor); }

// sum_i sum_k (Y_ik - phi_ik)^2 and, when dprobs is given, adds scale * d/dphi.
double squared_error(const Matrix& probs, const Sequence& Y, Matrix* dprobs, double scale) {
    double err = 0.0;
    for (size_t i = 0; i < probs.rows(); ++i) {
        const auto y = static_cast<size_t>(Y[i]);
        for (size_t k = 0; k < probs.cols(); ++k) {
            const double diff = probs(i, k) - (k == y ? 1.0 : 0.0);
            err += diff * diff;
            if (dprobs) (*dprobs)(i, k) += scale * 2.0 * diff;
        }
    }
    return err;
}

// Adds scale * d(-sum_i log p_{i,Y_i})/d(logits) for unclamped rows.
void add_nll_logit_grad(const Matrix& probs, const Sequence& Y, std::span<const int> mask, double scale,
                        Matrix& dlogits) {
    for (size_t i = 0; i < probs.rows(); ++i) {
        if (!mask.empty() && mask[i] == 0) continue;
        const auto y = static_cast<size_t>(Y[i]);
        if (std::log(probs(i, y)) < kLogProbFloor) continue;
        for (size_t k = 0; k < probs.cols(); ++k) dlogits(i, k) += scale * probs(i, k);
        dlogits(i, y) -= scale;
    }
}

}  // namespace

DesignContext make_context(const StructureContext& structure, const PriorHeadParams& prior_head) {
    return {structure, structure.unbound(), prior_encode(prior_head, structure)};
}

const DesignContext& lookup(const ContextMap& contexts, const std::string& structure_id) {
    const auto it = contexts.find(structure_id);
    if (it == contexts.end()) throw DataError("unknown structure id '" + structure_id + "'");
    return it->second;
}

double pretrain_loss(const PredictorParams& params, const Sequence& X, const Sequence& Y,
                     const StructureContext& structure, int t, const NoiseSchedule& schedule, std::uint64_t seed,
                     GradientBundle* grads) {
    if (t < 0 || t >= schedule.T) throw DomainError("pretrain timestep out of range");
    const Sequence z = forward_sample(X, Y, t, schedule, seed);
    const std::vector<int> v = refine_mask(z, Y);
    ForwardCache cache;
    const Matrix probs = predict(params, z, structure, t, grads ? &cache : nullptr);
    const double lambda = loss_weight(t, schedule);
    double nll = 0.0;
    for (size_t i = 0; i < v.size(); ++i) {
        if (v[i]) nll -= clamped_log(probs(i, static_cast<size_t>(Y[i])));
    }
    const double loss = lambda * nll;
    require_finite(loss, "pretrain loss");
    if (grads) {
        Matrix dlogits(probs.rows(), probs.cols());
        add_nll_logit_grad(probs, Y, v, lambda, dlogits);
        backward(params, cache, dlogits, *grads);
    }
    return loss;
}

double omega_weight(OmegaMode mode, int t, const NoiseSchedule& schedule) {
    switch (mode) {
        case OmegaMode::constant: return 1.0;
        case OmegaMode::loss_weight: return loss_weight(t, schedule);
    }
    return 1.0;
}

double neg_log_sigmoid(double x) {
    // -log sigma(x) = log(1 + e^{-x})
    return x >= 0.0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
}

DpoTerms dpo_terms_from_states(const PredictorParams& params, const PredictorParams& ref,
                               const StructureContext& structure, const Sequence& z_winner, const Sequence& z_loser,
                               const Sequence& winner, const Sequence& loser, int t, const NoiseSchedule& schedule,
                               const DpoConfig& config, GradientBundle* grads, double grad_scale) {
    if (!(config.beta_dpo > 0.0)) throw ConfigError("beta_dpo must be positive");
    if (winner.length() != structure.length() || loser.length() != structure.length()) {
        throw ShapeError("preference sequences do not match the structure length");
    }
    ForwardCache cache_w, cache_l;
    const Matrix pw = predict(params, z_winner, structure, t, grads ? &cache_w : nullptr);
    const Matrix pl = predict(params, z_loser, structure, t, grads ? &cache_l : nullptr);
    const Matrix rw = predict(ref, z_winner, structure, t);
    const Matrix rl = predict(ref, z_loser, structure, t);

    DpoTerms terms;
    terms.err_ref_winner = squared_error(rw, winner, nullptr, 0.0);
    terms.err_ref_loser = squared_error(rl, loser, nullptr, 0.0);
    terms.err_policy_winner = squared_error(pw, winner, nullptr, 0.0);
    terms.err_policy_loser = squared_error(pl, loser, nullptr, 0.0);
    const double scale = config.beta_dpo * config.T * omega_weight(config.omega, t, schedule);
    const double diff = (terms.err_policy_winner - terms.err_ref_winner) -
                        (terms.err_policy_loser - terms.err_ref_loser);
    terms.inner = -scale * diff;
    terms.loss = neg_log_sigmoid(terms.inner);
    require_finite(terms.loss, "Bridge-DPO loss");

    if (grads) {
        // d(-log sigma(x))/dx = -sigma(-x); dx/d(err_policy_winner) = -scale.
        const double sig_neg = 1.0 / (1.0 + std::exp(terms.inner));
        const double d_err_w = grad_scale * sig_neg * scale;
        const double d_err_l = -d_err_w;
        Matrix dpw(pw.rows(), pw.cols()), dpl(pl.rows(), pl.cols());
        squared_error(pw, winner, &dpw, d_err_w);
        squared_error(pl, loser, &dpl, d_err_l);
        backward(params, cache_w, softmax_backward(pw, dpw), *grads);
        backward(params, cache_l, softmax_backward(pl, dpl), *grads);
    }
    return terms;
}

DpoTerms bridge_dpo_terms(const PredictorParams& params, const PredictorParams& ref,
                          const StructureContext& structure, const Sequence& X, const Sequence& winner,
                          const Sequence& loser, int t, const NoiseSchedule& schedule, const DpoConfig& config,
                          std::uint64_t seed, GradientBundle* grads, double grad_scale) {
    if (t < 0 || t >= schedule.T) throw DomainError("DPO timestep out of range");
    const Sequence z_w = forward_sample(X, winner, t, schedule, derive_seed(seed, {0x77}));
    const Sequence z_l = forward_sample(X, loser, t, schedule, derive_seed(seed, {0x6c}));
    return dpo_terms_from_states(params, ref, structure, z_w, z_l, winner, loser, t, schedule, config, grads,
                                 grad_scale);
}

double bridge_dpo_loss(const PredictorParams& params, const PredictorParams& ref, const StructureContext& structure,
                       const Sequence& X, const Sequence& winner, const Sequence& loser, int t,
                       const NoiseSchedule& schedule, const DpoConfig& config, std::uint64_t seed,
                       GradientBundle* grads) {
    return bridge_dpo_terms(params, ref, structure, X, winner, loser, t, schedule, config, seed, grads).loss;
}

double model_log_likelihood(const PredictorParams& params, const Sequence& X, const Sequence& Y,
                            const StructureContext& structure, const NoiseSchedule& schedule, int samples,
                            std::uint64_t eval_seed, GradientBundle* grads, double grad_scale) {
    if (samples < 1) throw ConfigError("likelihood estimate needs at least one sample");
    Rng steps(eval_seed, 0x6c6c7473);
    double total = 0.0;
    for (int m = 0; m < samples; ++m) {
        const int t = static_cast<int>(steps.below(static_cast<std::uint64_t>(schedule.T)));
        const Sequence z = forward_sample(X, Y, t, schedule, derive_seed(eval_seed, {static_cast<std::uint64_t>(m)}));
        ForwardCache cache;
        const Matrix probs = predict(params, z, structure, t, grads ? &cache : nullptr);
        for (size_t i = 0; i < probs.rows(); ++i) total += clamped_log(probs(i, static_cast<size_t>(Y[i])));
        if (grads) {
            Matrix dlogits(probs.rows(), probs.cols());
            // d(log p)/d(logits) = -(d(-log p)/d(logits))
            add_nll_logit_grad(probs, Y, {}, -grad_scale / samples, dlogits);
            backward(params, cache, dlogits, *grads);
        }
    }
    return total / samples;
}

double ddg_predict(const PredictorParams& params, const DesignContext& context, const Sequence& winner,
                   const Sequence& loser, const NoiseSchedule& schedule, const EnergyLossState& state,
                   GradientBundle* grads, double* dkbt, double upstream) {
    if (context.bound.num_chains() < 2) throw DomainError("ddG prediction needs a structure with at least two chains");
    const double c = -state.kbt * upstream;  // d(loss)/d(winner log-ratio)
    auto ll = [&](const Sequence& y, const StructureContext& s, double sign) {
        return model_log_likelihood(params, context.prior, y, s, schedule, state.samples, state.eval_seed, grads,
                                    sign * c);
    };
    const double ratio_w = ll(winner, context.bound, 1.0) - ll(winner, context.unbound, -1.0);
    const double ratio_l = ll(loser, context.bound, -1.0) - ll(loser, context.unbound, 1.0);
    const double r = ratio_w - ratio_l;
    if (dkbt) *dkbt += upstream * -r;
    return -state.kbt * r;
}

double ddg_predict(const PredictorParams& params, const PreferencePair& pair, const ContextMap& contexts,
                   const NoiseSchedule& schedule, const EnergyLossState& state) {
    return ddg_predict(params, lookup(contexts, pair.structure_id), pair.winner, pair.loser, schedule, state);
}

double energy_loss(const PredictorParams& params, const EnergyLossState& state,
                   std::span<const PreferencePair> pairs, const ContextMap& contexts, const NoiseSchedule& schedule,
                   GradientBundle* grads, double* dkbt, double grad_scale) {
    if (pairs.empty()) throw DomainError("energy loss needs at least one labelled pair");
    const double n = static_cast<double>(pairs.size());
    double total = 0.0;
    for (const auto& pair : pairs) {
        const DesignContext& ctx = lookup(contexts, pair.structure_id);
        const double pred = ddg_predict(params, ctx, pair.winner, pair.loser, schedule, state);
        const double residual = pred - pair.ddg_label;
        total += std::abs(residual);
        if (grads || dkbt) {
            const double sign = residual > 0.0 ? 1.0 : (residual < 0.0 ? -1.0 : 0.0);
            if (sign != 0.0) {
                ddg_predict(params, ctx, pair.winner, pair.loser, schedule, state, grads, dkbt, grad_scale * sign / n);
            }
        }
    }
    const double loss = total / n;
    require_finite(loss, "energy loss");
    return loss;
}

double total_loss(double dpo_term, double energy_term, const TotalLossConfig& config, LossMode mode) {
    if (config.lambda_energy < 0.0) throw ConfigError("lambda_energy must be non-negative");
    switch (mode) {
        case LossMode::energy_only: return energy_term;
        case LossMode::dpo_only: return dpo_term;
        default: return dpo_term + config.lambda_energy * energy_term;
    }
}

double posterior_score(const PredictorParams& params, const Sequence& X, const Sequence& Y,
                       const StructureContext& structure, const NoiseSchedule& schedule, int samples,
                       std::uint64_t eval_seed, const EnergyFunction& energy, double beta_post) {
    if (beta_post < 0.0) throw DomainError("beta_post must be non-negative");
    const double ll = model_log_likelihood(params, X, Y, structure, schedule, samples, eval_seed);
    return beta_post == 0.0 ? ll : ll - beta_post * energy(Y);
}

}  // namespace enerbridge
