#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "enerbridge/bridge.hpp"
#include "enerbridge/objectives.hpp"
#include "enerbridge/predictor.hpp"
#include "enerbridge/world.hpp"

namespace enerbridge {

/// Everything that defines a trained model.
struct Model {
    PredictorParams predictor;
    PriorHeadParams prior;
    double kbt = 1.0;

    friend bool operator==(const Model&, const Model&) = default;
};

enum class LrSchedule { constant, noam };

struct TrainConfig {
    int epochs = 50;
    int batch_size = 2000;  // residues when pretraining, pairs when fine-tuning
    double base_lr = 1e-3;
    LrSchedule lr_schedule = LrSchedule::noam;
    int warmup = 100;
    int noam_dim = 0;  // 0: use the predictor hidden width
    std::uint64_t seed = 0;
    LossMode loss_mode = LossMode::pretrain;
    DpoConfig dpo;
    TotalLossConfig total;
    int patience = 10;          // early stopping (pretraining only)
    int likelihood_samples = 4;  // M for the energy term
};

// ---------------------------------------------------------------------------

/// base_lr * dim^-0.5 * min(step^-0.5, step * warmup^-1.5)
double noam_lr(long step, long warmup, int dim, double base_lr);

struct AdamConstants {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam moments for an arbitrary list of parameter blocks.
struct OptimizerState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    long step = 0;
    AdamConstants constants;
};

/// One bias-corrected Adam update over matching parameter/gradient blocks.
/// Throws NumericalError (leaving everything untouched) on non-finite
/// gradients.
void adam_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
               OptimizerState& state, double lr);

/// Flat views in PredictorParams::visit order.
std::vector<std::span<double>> parameter_blocks(PredictorParams& params);
std::vector<std::span<const double>> parameter_blocks(const PredictorParams& params);

// ---------------------------------------------------------------------------

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double kbt = 1.0;
    double lr = 0.0;
};

struct TrainResult {
    Model model;
    std::vector<EpochRecord> history;
    int best_epoch = -1;
};

/// Cross-entropy fit of the structure-feature prior head on the training split.
PriorHeadParams train_prior_head(std::span<const WorldEntry> world, const TrainConfig& config,
                                 std::vector<EpochRecord>* history = nullptr);

/// Builds the design contexts of every world entry under a frozen prior head.
ContextMap build_contexts(std::span<const WorldEntry> world, const PriorHeadParams& prior);

/// Bridge pretraining on the "train" split with early stopping on "val".
/// `init` carries the frozen prior head and the starting predictor.
TrainResult pretrain(std::span<const WorldEntry> world, const Model& init, const NoiseSchedule& schedule,
                     const TrainConfig& config);

/// DPO fine-tuning (plus the energy term per loss_mode) starting from and
/// regularized towards `reference`, which is never modified.
TrainResult dpo_finetune(std::span<const WorldEntry> world, std::span<const PreferencePair> pairs,
                         const Model& reference, const NoiseSchedule& schedule, const TrainConfig& config);

/// Deterministic validation loss used for early stopping: the pretrain loss
/// averaged over every timestep of every entry.
double pretrain_eval_loss(const PredictorParams& params, std::span<const WorldEntry> entries,
                          const ContextMap& contexts, const NoiseSchedule& schedule, std::uint64_t seed);

std::string to_string(LossMode mode);
LossMode loss_mode_from_string(const std::string& name);

}  // namespace enerbridge
