#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "enerbridge/bridge.hpp"
#include "enerbridge/objectives.hpp"
#include "enerbridge/trainer.hpp"
#include "enerbridge/world.hpp"

namespace enerbridge {

// ---------------------------------------------------------------------------
// Primitive statistics. std::nullopt marks an undefined value (for example a
// correlation with a zero-variance input).

double median(std::vector<double> values);
double mean(std::span<const double> values);
double population_std(std::span<const double> values);

/// Average ranks (1-based), ties share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

std::optional<double> pearson(std::span<const double> x, std::span<const double> y);
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

struct AffineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double error = 0.0;  // RMSE for the least-squares fit, MAE for the LAD fit
};

/// Least-squares a * pred + b against labels; error is the RMSE after the fit.
AffineFit least_squares_fit(std::span<const double> preds, std::span<const double> labels);
/// Least-absolute-deviation a * pred + b; error is the MAE after the fit.
AffineFit least_absolute_fit(std::span<const double> preds, std::span<const double> labels);

/// Probability that a random positive outscores a random negative, ties
/// counted half. Undefined when either class is empty.
std::optional<double> auroc(std::span<const double> scores, std::span<const int> positive);

// ---------------------------------------------------------------------------

struct BucketMetrics {
    std::optional<double> perplexity;
    std::optional<double> recovery;
};

struct StructureCorrelation {
    std::optional<double> pearson;
    std::optional<double> spearman;
    int n = 0;
};

struct MetricsReport {
    std::map<std::string, std::optional<double>> scalars;
    std::map<std::string, BucketMetrics> buckets;
    std::map<std::string, StructureCorrelation> per_structure;
    std::vector<std::string> flags;

    std::optional<double> scalar(const std::string& name) const;
};

/// "short" (L < 100), "medium" (100 <= L < 500), "long" (500 <= L < 1000).
/// Longer sequences fall only into "full".
std::optional<std::string> length_bucket(int L);

/// exp(mean negative log-likelihood per token); totals are per bucket.
MetricsReport perplexity(const PredictorParams& params, std::span<const WorldEntry> dataset, const ContextMap& contexts,
                         const NoiseSchedule& schedule, int samples, std::uint64_t eval_seed);

/// Percentage of positions where design matches native.
double recovery_rate(const Sequence& design, const Sequence& native);

/// Reverse-samples one design per entry and reports the median recovery per
/// bucket ("recovery" in the bucket map, and "median_recovery" overall).
MetricsReport recovery(const Model& model, std::span<const WorldEntry> dataset, const NoiseSchedule& schedule,
                       std::uint64_t seed, std::vector<double>* per_structure = nullptr);

/// Median recovery per bucket from precomputed (length, recovery) values.
std::map<std::string, double> bucket_medians(std::span<const int> lengths, std::span<const double> recoveries);

/// Rows are models, columns are evaluation methods. Each column is
/// standardized across models (population std); the score is exp of the
/// target row's mean standardized value. Zero-std columns contribute 0.
double zscore(const std::vector<std::vector<double>>& table, std::size_t target_model);

/// Seven-metric ddG suite. AUROC treats label < 0 as the positive class and
/// ranks by -pred.
MetricsReport ddg_metrics(std::span<const double> preds, std::span<const double> labels,
                          std::span<const std::string> groups);

struct EnergyRow {
    std::string model;
    double mean = 0.0;
    double std = 0.0;
    std::vector<double> energies;
};

struct DesignSet {
    std::string model;
    std::vector<std::string> structure_ids;  // one per design
    std::vector<Sequence> designs;
};

std::vector<EnergyRow> energy_table(std::span<const DesignSet> models, std::span<const WorldEntry> world);

struct DdgFold {
    std::vector<double> preds;
    std::vector<double> labels;
    std::vector<std::string> groups;
};

/// Pools every fold's predictions and recomputes the suite on the pool.
MetricsReport fold_aggregate(std::span<const DdgFold> folds);

/// Predicts ddG(mutant vs native) for every mutant of the given entries.
DdgFold predict_mutant_ddg(const PredictorParams& params, std::span<const WorldEntry> entries,
                           const ContextMap& contexts, const NoiseSchedule& schedule, const EnergyLossState& state);

}  // namespace enerbridge
