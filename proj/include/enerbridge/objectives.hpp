#pragma once

// Scalar training and ranking objectives. Every loss takes an optional
// GradientBundle* and, when given, accumulates its exact gradient there
// (added, not overwritten), so batch losses are plain sums of calls.

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>

#include "enerbridge/bridge.hpp"
#include "enerbridge/predictor.hpp"
#include "enerbridge/structure.hpp"
#include "enerbridge/world.hpp"

namespace enerbridge {

/// Lower bound applied to every log-probability.
inline constexpr double kLogProbFloor = -30.0;

enum class OmegaMode {
    constant,     // omega(lambda_t) = 1
    loss_weight,  // omega(lambda_t) = lambda_t
};

struct DpoConfig {
    double beta_dpo = 0.1;
    OmegaMode omega = OmegaMode::constant;
    int T = 25;
};

struct EnergyLossState {
    double kbt = 1.0;
    int samples = 4;  // M, timestep draws per likelihood estimate
    std::uint64_t eval_seed = 0;
};

enum class LossMode { pretrain, dpo_energy, dpo_only, energy_only };

struct TotalLossConfig {
    double lambda_energy = 0.5;
};

/// Everything a loss needs about one structure: both contact contexts and the
/// frozen prior X = E(S).
struct DesignContext {
    StructureContext bound;
    StructureContext unbound;
    Sequence prior;
};

using ContextMap = std::map<std::string, DesignContext>;

DesignContext make_context(const StructureContext& structure, const PriorHeadParams& prior_head);
const DesignContext& lookup(const ContextMap& contexts, const std::string& structure_id);

// ---------------------------------------------------------------------------

/// lambda_t * sum_i v_i * (-log phi(z_t, S, t)_{i, Y_i}) for one draw of z_t.
double pretrain_loss(const PredictorParams& params, const Sequence& X, const Sequence& Y,
                     const StructureContext& structure, int t, const NoiseSchedule& schedule, std::uint64_t seed,
                     GradientBundle* grads = nullptr);

/// The four squared errors of one Bridge-DPO evaluation and the derived loss.
struct DpoTerms {
    double err_policy_winner = 0.0;
    double err_ref_winner = 0.0;
    double err_policy_loser = 0.0;
    double err_ref_loser = 0.0;
    double inner = 0.0;  // argument of log sigma
    double loss = 0.0;
};

double omega_weight(OmegaMode mode, int t, const NoiseSchedule& schedule);

/// -log sigma(x), stable for large |x|.
double neg_log_sigmoid(double x);

/// Bridge-DPO on explicit bridge states z_w, z_l.
DpoTerms dpo_terms_from_states(const PredictorParams& params, const PredictorParams& ref,
                               const StructureContext& structure, const Sequence& z_winner, const Sequence& z_loser,
                               const Sequence& winner, const Sequence& loser, int t, const NoiseSchedule& schedule,
                               const DpoConfig& config, GradientBundle* grads = nullptr, double grad_scale = 1.0);

/// Samples z_w, z_l independently from q(z_t | X, Y) and evaluates Bridge-DPO.
DpoTerms bridge_dpo_terms(const PredictorParams& params, const PredictorParams& ref,
                          const StructureContext& structure, const Sequence& X, const Sequence& winner,
                          const Sequence& loser, int t, const NoiseSchedule& schedule, const DpoConfig& config,
                          std::uint64_t seed, GradientBundle* grads = nullptr, double grad_scale = 1.0);

double bridge_dpo_loss(const PredictorParams& params, const PredictorParams& ref, const StructureContext& structure,
                       const Sequence& X, const Sequence& winner, const Sequence& loser, int t,
                       const NoiseSchedule& schedule, const DpoConfig& config, std::uint64_t seed,
                       GradientBundle* grads = nullptr);

/// Fixed-seed estimate of log p(Y | S): the mean over M timestep draws of
/// sum_i log phi(z_t, S, t)_{i, Y_i}. The gradient is scaled by grad_scale.
double model_log_likelihood(const PredictorParams& params, const Sequence& X, const Sequence& Y,
                            const StructureContext& structure, const NoiseSchedule& schedule, int samples,
                            std::uint64_t eval_seed, GradientBundle* grads = nullptr, double grad_scale = 1.0);

/// Boltzmann-alignment ddG of the winner relative to the loser:
/// -kbt * [(ll(Yw|bnd) - ll(Yw|unbnd)) - (ll(Yl|bnd) - ll(Yl|unbnd))].
/// With gradients, `upstream` is d(loss)/d(prediction).
double ddg_predict(const PredictorParams& params, const DesignContext& context, const Sequence& winner,
                   const Sequence& loser, const NoiseSchedule& schedule, const EnergyLossState& state,
                   GradientBundle* grads = nullptr, double* dkbt = nullptr, double upstream = 1.0);

double ddg_predict(const PredictorParams& params, const PreferencePair& pair, const ContextMap& contexts,
                   const NoiseSchedule& schedule, const EnergyLossState& state);

/// Mean |ddg_predict - ddg_label| over the pairs. Gradient flows to params and
/// (through dkbt) to kbt.
double energy_loss(const PredictorParams& params, const EnergyLossState& state,
                   std::span<const PreferencePair> pairs, const ContextMap& contexts, const NoiseSchedule& schedule,
                   GradientBundle* grads = nullptr, double* dkbt = nullptr, double grad_scale = 1.0);

/// dpo + lambda * energy; energy_only drops the DPO term, dpo_only the energy term.
double total_loss(double dpo_term, double energy_term, const TotalLossConfig& config,
                  LossMode mode = LossMode::dpo_energy);

using EnergyFunction = std::function<double(const Sequence&)>;

/// log p(Y | S) - beta_post * E(S, Y); higher ranks a design better.
double posterior_score(const PredictorParams& params, const Sequence& X, const Sequence& Y,
                       const StructureContext& structure, const NoiseSchedule& schedule, int samples,
                       std::uint64_t eval_seed, const EnergyFunction& energy, double beta_post);

}  // namespace enerbridge
