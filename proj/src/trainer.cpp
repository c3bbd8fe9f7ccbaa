#include "enerbridge/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "enerbridge/errors.hpp"
#include "enerbridge/rng.hpp"

namespace enerbridge {

namespace {

using std::size_t;

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<size_t>(rng.below(i))]);
}

void scale_bundle(GradientBundle& g, double s) {
    g.for_each([s](const char*, Matrix& m) {
        for (double& v : m.flat()) v *= s;
    });
}

// Learning rate at optimizer step `step` (1-based). For noam, base_lr is the
// peak value reached at step == warmup.
double scheduled_lr(const TrainConfig& config, long step, int hidden) {
    if (config.lr_schedule == LrSchedule::constant) return config.base_lr;
    const int dim = config.noam_dim > 0 ? config.noam_dim : hidden;
    const double peak_factor = std::sqrt(static_cast<double>(dim) * config.warmup);
    return noam_lr(step, config.warmup, dim, config.base_lr * peak_factor);
}

void check_config(const TrainConfig& config) {
    if (config.epochs < 0) throw ConfigError("epochs must be non-negative");
    if (config.batch_size < 1) throw ConfigError("batch_size must be positive");
    if (!(config.base_lr > 0.0)) throw ConfigError("base_lr must be positive");
    if (config.warmup < 1) throw ConfigError("warmup must be at least 1");
}

std::vector<const WorldEntry*> entries_in(std::span<const WorldEntry> world, const std::string& split) {
    std::vector<const WorldEntry*> out;
    for (const auto& e : world) {
        if (e.split == split) out.push_back(&e);
    }
    return out;
}

}  // namespace

double noam_lr(long step, long warmup, int dim, double base_lr) {
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(warmup);
    return base_lr * std::pow(static_cast<double>(dim), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

void adam_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
               OptimizerState& state, double lr) {
    if (params.size() != grads.size()) throw ShapeError("parameter and gradient block counts differ");
    for (size_t b = 0; b < params.size(); ++b) {
        if (params[b].size() != grads[b].size()) throw ShapeError("parameter and gradient block sizes differ");
        for (double g : grads[b]) {
            if (!std::isfinite(g)) throw NumericalError("non-finite gradient; optimizer step aborted");
        }
    }
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.size(), 0.0);
            state.v.emplace_back(p.size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("optimizer state does not match parameter blocks");
    ++state.step;
    const auto& c = state.constants;
    const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    for (size_t b = 0; b < params.size(); ++b) {
        auto& m = state.m[b];
        auto& v = state.v[b];
        if (m.size() != params[b].size()) throw ShapeError("optimizer moment shape mismatch");
        for (size_t k = 0; k < m.size(); ++k) {
            const double g = grads[b][k];
            m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g;
            v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
            const double m_hat = m[k] / correction1;
            const double v_hat = v[k] / correction2;
            params[b][k] -= lr * m_hat / (std::sqrt(v_hat) + c.eps);
        }
    }
}

std::vector<std::span<double>> parameter_blocks(PredictorParams& params) {
    std::vector<std::span<double>> out;
    params.for_each([&](const char*, Matrix& m) { out.push_back(m.flat()); });
    return out;
}

std::vector<std::span<const double>> parameter_blocks(const PredictorParams& params) {
    std::vector<std::span<const double>> out;
    params.for_each([&](const char*, const Matrix& m) { out.push_back(m.flat()); });
    return out;
}

PriorHeadParams train_prior_head(std::span<const WorldEntry> world, const TrainConfig& config,
                                 std::vector<EpochRecord>* history) {
    check_config(config);
    auto train = entries_in(world, "train");
    if (train.empty()) throw DataError("prior head training needs at least one training structure");
    const int f = train.front()->structure.feature_width();
    const int K = train.front()->native.alphabet_size();
    PriorHeadParams prior = init_prior_head(derive_seed(config.seed, {0x7072}), f, K);
    size_t positions = 0;
    for (const auto* e : train) positions += static_cast<size_t>(e->structure.length());

    OptimizerState opt;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        PriorHeadParams g{Matrix(prior.weight.rows(), prior.weight.cols()), Matrix(1, prior.bias.cols())};
        double loss = 0.0;
        for (const auto* e : train) {
            const Matrix logits = prior_logits(prior, e->structure);
            for (size_t i = 0; i < logits.rows(); ++i) {
                const auto row = logits.row(i);
                const double mx = *std::max_element(row.begin(), row.end());
                double z = 0.0;
                for (double v : row) z += std::exp(v - mx);
                const auto y = static_cast<size_t>(e->native[i]);
                loss += -(row[y] - mx - std::log(z));
                const auto feats = e->structure.features().row(i);
                for (size_t k = 0; k < row.size(); ++k) {
                    const double d = (std::exp(row[k] - mx) / z - (k == y ? 1.0 : 0.0)) / static_cast<double>(positions);
                    g.bias(0, k) += d;
                    for (size_t c = 0; c < feats.size(); ++c) g.weight(c, k) += feats[c] * d;
                }
            }
        }
        loss /= static_cast<double>(positions);
        if (!std::isfinite(loss)) throw NumericalError("prior head training diverged at epoch " + std::to_string(epoch));
        const std::vector<std::span<double>> p{prior.weight.flat(), prior.bias.flat()};
        const std::vector<std::span<const double>> gr{g.weight.flat(), g.bias.flat()};
        adam_step(p, gr, opt, config.base_lr);
        if (history) history->push_back({epoch, loss, 0.0, 1.0, config.base_lr});
    }
    return prior;
}

ContextMap build_contexts(std::span<const WorldEntry> world, const PriorHeadParams& prior) {
    ContextMap out;
    for (const auto& e : world) out.emplace(e.structure.id(), make_context(e.structure, prior));
    return out;
}

double pretrain_eval_loss(const PredictorParams& params, std::span<const WorldEntry> entries,
                          const ContextMap& contexts, const NoiseSchedule& schedule, std::uint64_t seed) {
    if (entries.empty()) return 0.0;
    double total = 0.0;
    for (const auto& e : entries) {
        const DesignContext& ctx = lookup(contexts, e.structure.id());
        for (int t = 0; t < schedule.T; ++t) {
            total += pretrain_loss(params, ctx.prior, e.native, ctx.bound, t, schedule,
                                   derive_seed(seed, {static_cast<std::uint64_t>(t)}));
        }
    }
    return total / (static_cast<double>(entries.size()) * schedule.T);
}

TrainResult pretrain(std::span<const WorldEntry> world, const Model& init, const NoiseSchedule& schedule,
                     const TrainConfig& config) {
    check_config(config);
    init.predictor.validate();
    if (init.predictor.dims.T != schedule.T) throw ConfigError("predictor T does not match the noise schedule");
    const ContextMap contexts = build_contexts(world, init.prior);
    const auto train = entries_in(world, "train");
    if (train.empty()) throw DataError("pretraining needs at least one training structure");
    std::vector<WorldEntry> val_entries;
    for (const auto* e : entries_in(world, "val")) val_entries.push_back(*e);
    if (val_entries.empty()) {
        for (const auto* e : train) val_entries.push_back(*e);
    }
    const std::uint64_t val_seed = derive_seed(config.seed, {0x76616c});

    TrainResult result;
    result.model = init;
    Model current = init;
    OptimizerState opt;
    double best = pretrain_eval_loss(current.predictor, val_entries, contexts, schedule, val_seed);
    result.best_epoch = 0;
    int since_best = 0;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        Rng rng(config.seed, derive_seed(0x70726574, {static_cast<std::uint64_t>(epoch)}));
        std::vector<const WorldEntry*> order = train;
        shuffle(order, rng);
        double epoch_loss = 0.0;
        double lr = 0.0;
        size_t cursor = 0;
        while (cursor < order.size()) {
            GradientBundle g = GradientBundle::zeros(current.predictor.dims);
            int residues = 0;
            int examples = 0;
            double batch_loss = 0.0;
            while (cursor < order.size() && residues < config.batch_size) {
                const WorldEntry& e = *order[cursor++];
                const DesignContext& ctx = lookup(contexts, e.structure.id());
                const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.T)));
                batch_loss += pretrain_loss(current.predictor, ctx.prior, e.native, ctx.bound, t, schedule, rng.next(), &g);
                residues += e.structure.length();
                ++examples;
            }
            if (!std::isfinite(batch_loss)) {
                throw NumericalError("pretraining diverged at epoch " + std::to_string(epoch));
            }
            scale_bundle(g, 1.0 / examples);
            lr = scheduled_lr(config, opt.step + 1, current.predictor.dims.d);
            adam_step(parameter_blocks(current.predictor), parameter_blocks(std::as_const(g)), opt, lr);
            epoch_loss += batch_loss;
        }
        epoch_loss /= static_cast<double>(order.size());
        const double val = pretrain_eval_loss(current.predictor, val_entries, contexts, schedule, val_seed);
        if (!std::isfinite(val)) throw NumericalError("validation loss diverged at epoch " + std::to_string(epoch));
        result.history.push_back({epoch, epoch_loss, val, current.kbt, lr});
        if (val < best) {
            best = val;
            result.model = current;
            result.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    return result;
}

TrainResult dpo_finetune(std::span<const WorldEntry> world, std::span<const PreferencePair> pairs,
                         const Model& reference, const NoiseSchedule& schedule, const TrainConfig& config) {
    check_config(config);
    reference.predictor.validate();
    const LossMode mode = config.loss_mode;
    if (mode == LossMode::pretrain) throw ConfigError("fine-tuning needs a DPO or energy loss mode");
    const bool use_dpo = mode != LossMode::energy_only;
    const bool use_energy = mode != LossMode::dpo_only;
    const ContextMap contexts = build_contexts(world, reference.prior);
    for (const auto& p : pairs) lookup(contexts, p.structure_id);

    auto multi_chain = [&](const PreferencePair& p) { return lookup(contexts, p.structure_id).bound.num_chains() >= 2; };
    if (mode == LossMode::energy_only && std::none_of(pairs.begin(), pairs.end(), multi_chain)) {
        throw DomainError("energy-only fine-tuning needs multi-chain pairs (ddG undefined otherwise)");
    }
    DpoConfig dpo = config.dpo;
    dpo.T = schedule.T;
    const double energy_weight = mode == LossMode::energy_only ? 1.0 : config.total.lambda_energy;

    TrainResult result;
    Model policy = reference;
    OptimizerState opt;
    std::vector<size_t> order(pairs.size());
    for (size_t k = 0; k < order.size(); ++k) order[k] = k;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        Rng rng(config.seed, derive_seed(0x64706f, {static_cast<std::uint64_t>(epoch)}));
        shuffle(order, rng);
        double epoch_loss = 0.0;
        double lr = 0.0;
        int batches = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
            const size_t stop = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
            const double inv = 1.0 / static_cast<double>(stop - start);
            GradientBundle g = GradientBundle::zeros(policy.predictor.dims);
            double dkbt = 0.0;
            double dpo_sum = 0.0;
            std::vector<PreferencePair> energy_batch;
            for (size_t k = start; k < stop; ++k) {
                const PreferencePair& pair = pairs[order[k]];
                const DesignContext& ctx = lookup(contexts, pair.structure_id);
                const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.T)));
                const std::uint64_t seed = rng.next();
                if (use_dpo) {
                    dpo_sum += bridge_dpo_terms(policy.predictor, reference.predictor, ctx.bound, ctx.prior, pair.winner,
                                                pair.loser, t, schedule, dpo, seed, &g, inv)
                                   .loss;
                }
                if (use_energy && ctx.bound.num_chains() >= 2) energy_batch.push_back(pair);
            }
            double energy = 0.0;
            if (!energy_batch.empty()) {
                const EnergyLossState state{policy.kbt, config.likelihood_samples, rng.next()};
                energy = energy_loss(policy.predictor, state, energy_batch, contexts, schedule, &g, &dkbt, energy_weight);
            }
            const double batch_loss = total_loss(dpo_sum * inv, energy, config.total, mode);
            if (!std::isfinite(batch_loss)) {
                throw NumericalError("fine-tuning diverged at epoch " + std::to_string(epoch));
            }
            lr = scheduled_lr(config, opt.step + 1, policy.predictor.dims.d);
            auto blocks = parameter_blocks(policy.predictor);
            auto grads = parameter_blocks(std::as_const(g));
            if (use_energy) {
                blocks.emplace_back(&policy.kbt, 1);
                grads.emplace_back(&dkbt, 1);
            }
            adam_step(blocks, grads, opt, lr);
            epoch_loss += batch_loss;
            ++batches;
        }
        result.history.push_back({epoch, batches ? epoch_loss / batches : 0.0, 0.0, policy.kbt, lr});
    }
    result.model = policy;
    result.best_epoch = config.epochs;
    return result;
}

std::string to_string(LossMode mode) {
    switch (mode) {
        case LossMode::pretrain: return "pretrain";
        case LossMode::dpo_energy: return "dpo_energy";
        case LossMode::dpo_only: return "dpo_only";
        case LossMode::energy_only: return "energy_only";
    }
    return "pretrain";
}

LossMode loss_mode_from_string(const std::string& name) {
    if (name == "pretrain") return LossMode::pretrain;
    if (name == "dpo_energy" || name == "full") return LossMode::dpo_energy;
    if (name == "dpo_only") return LossMode::dpo_only;
    if (name == "energy_only") return LossMode::energy_only;
    throw ConfigError("unknown loss mode '" + name + "'");
}

}  // namespace enerbridge
