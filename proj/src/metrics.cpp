#include "enerbridge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "enerbridge/errors.hpp"
#include "enerbridge/rng.hpp"

namespace enerbridge {

namespace {

using std::size_t;

void check_paired(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ShapeError("paired vectors differ in length");
}

std::uint64_t id_tag(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
    return h;
}

// Sum |r_i - median(r)| with r_i = y_i - a x_i, and the minimizing intercept.
std::pair<double, double> lad_for_slope(std::span<const double> x, std::span<const double> y, double a) {
    std::vector<double> r(x.size());
    for (size_t i = 0; i < x.size(); ++i) r[i] = y[i] - a * x[i];
    const double b = median(r);
    double total = 0.0;
    for (double v : r) total += std::abs(v - b);
    return {total, b};
}

const char* const kBucketNames[] = {"short", "medium", "long"};

}  // namespace

double median(std::vector<double> values) {
    if (values.empty()) throw DomainError("median of an empty set");
    const size_t n = values.size();
    const size_t mid = n / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
    const double upper = values[mid];
    if (n % 2 == 1) return upper;
    const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

double mean(std::span<const double> values) {
    if (values.empty()) throw DomainError("mean of an empty set");
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double population_std(std::span<const double> values) {
    const double m = mean(values);
    double ss = 0.0;
    for (double v : values) ss += (v - m) * (v - m);
    return std::sqrt(ss / static_cast<double>(values.size()));
}

std::vector<double> average_ranks(std::span<const double> values) {
    std::vector<size_t> order(values.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(values.size());
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
    check_paired(x, y);
    if (x.size() < 2) return std::nullopt;
    const double mx = mean(x), my = mean(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
    check_paired(x, y);
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    return pearson(rx, ry);
}

AffineFit least_squares_fit(std::span<const double> preds, std::span<const double> labels) {
    check_paired(preds, labels);
    if (preds.empty()) throw DomainError("affine fit of an empty set");
    const double mx = mean(preds), my = mean(labels);
    double sxy = 0.0, sxx = 0.0;
    for (size_t i = 0; i < preds.size(); ++i) {
        sxy += (preds[i] - mx) * (labels[i] - my);
        sxx += (preds[i] - mx) * (preds[i] - mx);
    }
    AffineFit fit;
    fit.slope = sxx > 0.0 ? sxy / sxx : 0.0;
    fit.intercept = my - fit.slope * mx;
    double ss = 0.0;
    for (size_t i = 0; i < preds.size(); ++i) {
        const double r = labels[i] - (fit.slope * preds[i] + fit.intercept);
        ss += r * r;
    }
    fit.error = std::sqrt(ss / static_cast<double>(preds.size()));
    return fit;
}

AffineFit least_absolute_fit(std::span<const double> preds, std::span<const double> labels) {
    check_paired(preds, labels);
    if (preds.empty()) throw DomainError("affine fit of an empty set");
    const size_t n = preds.size();
    // For a fixed slope the best intercept is the median residual, and the
    // resulting objective is convex in the slope. The optimum lies between the
    // extreme pairwise slopes, so a golden-section search over that bracket
    // converges to it.
    double lo = 0.0, hi = 0.0;
    bool any = false;
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) {
            if (preds[i] == preds[j]) continue;
            const double s = (labels[j] - labels[i]) / (preds[j] - preds[i]);
            if (!any) lo = hi = s;
            lo = std::min(lo, s);
            hi = std::max(hi, s);
            any = true;
        }
    }
    AffineFit fit;
    if (!any) {
        const auto [err, b] = lad_for_slope(preds, labels, 0.0);
        fit = {0.0, b, err / static_cast<double>(n)};
        return fit;
    }
    constexpr double kGolden = 0.6180339887498949;
    double a = lo, b = hi;
    double c = b - kGolden * (b - a);
    double d = a + kGolden * (b - a);
    double fc = lad_for_slope(preds, labels, c).first;
    double fd = lad_for_slope(preds, labels, d).first;
    for (int it = 0; it < 200 && (b - a) > 1e-13 * (1.0 + std::abs(a) + std::abs(b)); ++it) {
        if (fc <= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - kGolden * (b - a);
            fc = lad_for_slope(preds, labels, c).first;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + kGolden * (b - a);
            fd = lad_for_slope(preds, labels, d).first;
        }
    }
    // Candidate slopes: the bracket ends and its midpoint.
    double best_slope = 0.5 * (a + b);
    auto best = lad_for_slope(preds, labels, best_slope);
    for (double s : {lo, hi, a, b}) {
        const auto cand = lad_for_slope(preds, labels, s);
        if (cand.first < best.first) {
            best = cand;
            best_slope = s;
        }
    }
    fit.slope = best_slope;
    fit.intercept = best.second;
    fit.error = best.first / static_cast<double>(n);
    return fit;
}

std::optional<double> auroc(std::span<const double> scores, std::span<const int> positive) {
    if (scores.size() != positive.size()) throw ShapeError("scores and labels differ in length");
    const auto ranks = average_ranks(scores);
    double rank_sum = 0.0;
    double n_pos = 0.0, n_neg = 0.0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (positive[i]) {
            rank_sum += ranks[i];
            n_pos += 1.0;
        } else {
            n_neg += 1.0;
        }
    }
    if (n_pos == 0.0 || n_neg == 0.0) return std::nullopt;
    // Mann-Whitney U with midranks equals the trapezoidal ROC area.
    return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

std::optional<double> MetricsReport::scalar(const std::string& name) const {
    const auto it = scalars.find(name);
    return it == scalars.end() ? std::nullopt : it->second;
}

std::optional<std::string> length_bucket(int L) {
    if (L < 100) return std::string(kBucketNames[0]);
    if (L < 500) return std::string(kBucketNames[1]);
    if (L < 1000) return std::string(kBucketNames[2]);
    return std::nullopt;
}

MetricsReport perplexity(const PredictorParams& params, std::span<const WorldEntry> dataset, const ContextMap& contexts,
                         const NoiseSchedule& schedule, int samples, std::uint64_t eval_seed) {
    if (dataset.empty()) throw DomainError("perplexity of an empty dataset");
    std::map<std::string, std::pair<double, double>> totals;  // bucket -> (nll, tokens)
    for (const auto& e : dataset) {
        const DesignContext& ctx = lookup(contexts, e.structure.id());
        const double ll = model_log_likelihood(params, ctx.prior, e.native, ctx.bound, schedule, samples,
                                               derive_seed(eval_seed, {id_tag(e.structure.id())}));
        const double L = e.structure.length();
        auto add = [&](const std::string& bucket) {
            totals[bucket].first -= ll;
            totals[bucket].second += L;
        };
        add("full");
        if (auto b = length_bucket(e.structure.length())) add(*b);
    }
    MetricsReport report;
    for (const auto& [bucket, tot] : totals) report.buckets[bucket].perplexity = std::exp(tot.first / tot.second);
    report.scalars["perplexity"] = report.buckets["full"].perplexity;
    return report;
}

double recovery_rate(const Sequence& design, const Sequence& native) {
    if (design.length() != native.length()) throw ShapeError("design and native differ in length");
    if (native.length() == 0) throw DomainError("recovery of an empty sequence");
    int hits = 0;
    for (int i = 0; i < native.length(); ++i) hits += design[static_cast<size_t>(i)] == native[static_cast<size_t>(i)];
    return 100.0 * hits / native.length();
}

std::map<std::string, double> bucket_medians(std::span<const int> lengths, std::span<const double> recoveries) {
    if (lengths.size() != recoveries.size()) throw ShapeError("lengths and recoveries differ in size");
    std::map<std::string, std::vector<double>> groups;
    for (size_t i = 0; i < lengths.size(); ++i) {
        groups["full"].push_back(recoveries[i]);
        if (auto b = length_bucket(lengths[i])) groups[*b].push_back(recoveries[i]);
    }
    std::map<std::string, double> out;
    for (auto& [bucket, values] : groups) out[bucket] = median(values);
    return out;
}

MetricsReport recovery(const Model& model, std::span<const WorldEntry> dataset, const NoiseSchedule& schedule,
                       std::uint64_t seed, std::vector<double>* per_structure) {
    if (dataset.empty()) throw DomainError("recovery of an empty dataset");
    std::vector<int> lengths;
    std::vector<double> rates;
    for (const auto& e : dataset) {
        const Sequence prior = prior_encode(model.prior, e.structure);
        const StepPredictor step = [&](const Sequence& z, int t) { return predict(model.predictor, z, e.structure, t); };
        const Sequence design = reverse_sample(step, prior, schedule, derive_seed(seed, {id_tag(e.structure.id())}));
        lengths.push_back(e.structure.length());
        rates.push_back(recovery_rate(design, e.native));
    }
    if (per_structure) *per_structure = rates;
    MetricsReport report;
    for (const auto& [bucket, value] : bucket_medians(lengths, rates)) report.buckets[bucket].recovery = value;
    report.scalars["median_recovery"] = report.buckets["full"].recovery;
    return report;
}

double zscore(const std::vector<std::vector<double>>& table, std::size_t target_model) {
    if (table.size() < 2) throw DomainError("ZScore needs at least two models per method");
    if (target_model >= table.size()) throw DomainError("ZScore target model out of range");
    const size_t methods = table.front().size();
    if (methods == 0) throw DomainError("ZScore needs at least one method");
    for (const auto& row : table) {
        if (row.size() != methods) throw ShapeError("ZScore table rows differ in width");
    }
    double total = 0.0;
    for (size_t m = 0; m < methods; ++m) {
        std::vector<double> column;
        for (const auto& row : table) column.push_back(row[m]);
        const double mu = mean(column);
        const double sd = population_std(column);
        if (sd > 0.0) total += (table[target_model][m] - mu) / sd;
    }
    return std::exp(total / static_cast<double>(methods));
}

MetricsReport ddg_metrics(std::span<const double> preds, std::span<const double> labels,
                          std::span<const std::string> groups) {
    check_paired(preds, labels);
    if (groups.size() != preds.size()) throw ShapeError("groups must match predictions");
    if (preds.size() < 2) throw DomainError("ddG metrics need at least two predictions");
    MetricsReport r;
    r.scalars["n"] = static_cast<double>(preds.size());
    r.scalars["pearson"] = pearson(preds, labels);
    r.scalars["spearman"] = spearman(preds, labels);
    if (!r.scalars["pearson"]) r.flags.push_back("correlation undefined: zero-variance input");
    r.scalars["min_rmse"] = least_squares_fit(preds, labels).error;
    r.scalars["min_mae"] = least_absolute_fit(preds, labels).error;
    std::vector<double> score(preds.size());
    std::vector<int> positive(preds.size());
    for (size_t i = 0; i < preds.size(); ++i) {
        score[i] = -preds[i];
        positive[i] = labels[i] < 0.0 ? 1 : 0;
    }
    r.scalars["auroc"] = auroc(score, positive);
    if (!r.scalars["auroc"]) r.flags.push_back("AUROC undefined: a class is empty");

    std::map<std::string, std::vector<size_t>> members;
    for (size_t i = 0; i < groups.size(); ++i) members[groups[i]].push_back(i);
    std::vector<double> ps, ss;
    int skipped = 0;
    for (const auto& [id, idx] : members) {
        StructureCorrelation sc;
        sc.n = static_cast<int>(idx.size());
        if (sc.n >= 3) {
            std::vector<double> x, y;
            for (size_t i : idx) {
                x.push_back(preds[i]);
                y.push_back(labels[i]);
            }
            sc.pearson = pearson(x, y);
            sc.spearman = spearman(x, y);
        }
        if (sc.pearson) ps.push_back(*sc.pearson);
        if (sc.spearman) ss.push_back(*sc.spearman);
        if (!sc.pearson || !sc.spearman) ++skipped;
        r.per_structure[id] = sc;
    }
    r.scalars["per_structure_pearson"] = ps.empty() ? std::nullopt : std::optional<double>(mean(ps));
    r.scalars["per_structure_spearman"] = ss.empty() ? std::nullopt : std::optional<double>(mean(ss));
    r.scalars["skipped_structures"] = static_cast<double>(skipped);
    return r;
}

std::vector<EnergyRow> energy_table(std::span<const DesignSet> models, std::span<const WorldEntry> world) {
    std::map<std::string, const WorldEntry*> by_id;
    for (const auto& e : world) by_id[e.structure.id()] = &e;
    std::vector<EnergyRow> rows;
    for (const auto& set : models) {
        if (set.structure_ids.size() != set.designs.size()) throw ShapeError("design set ids and designs differ");
        EnergyRow row;
        row.model = set.model;
        for (size_t k = 0; k < set.designs.size(); ++k) {
            const auto it = by_id.find(set.structure_ids[k]);
            if (it == by_id.end()) throw DataError("design references unknown structure '" + set.structure_ids[k] + "'");
            const WorldEntry& e = *it->second;
            if (set.designs[k].length() != e.structure.length()) throw ShapeError("design length does not match structure");
            row.energies.push_back(potts_energy(e.structure, e.potts, set.designs[k]));
        }
        if (!row.energies.empty()) {
            row.mean = mean(row.energies);
            row.std = population_std(row.energies);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

MetricsReport fold_aggregate(std::span<const DdgFold> folds) {
    if (folds.empty()) throw DomainError("fold aggregation needs at least one fold");
    DdgFold pooled;
    for (const auto& f : folds) {
        pooled.preds.insert(pooled.preds.end(), f.preds.begin(), f.preds.end());
        pooled.labels.insert(pooled.labels.end(), f.labels.begin(), f.labels.end());
        pooled.groups.insert(pooled.groups.end(), f.groups.begin(), f.groups.end());
    }
    MetricsReport r = ddg_metrics(pooled.preds, pooled.labels, pooled.groups);
    r.scalars["folds"] = static_cast<double>(folds.size());
    return r;
}

DdgFold predict_mutant_ddg(const PredictorParams& params, std::span<const WorldEntry> entries,
                           const ContextMap& contexts, const NoiseSchedule& schedule, const EnergyLossState& state) {
    DdgFold out;
    for (const auto& e : entries) {
        if (e.structure.num_chains() < 2) continue;
        const DesignContext& ctx = lookup(contexts, e.structure.id());
        for (const auto& m : e.mutants) {
            out.preds.push_back(ddg_predict(params, ctx, m.tokens, e.native, schedule, state));
            out.labels.push_back(m.ddg_vs_native);
            out.groups.push_back(e.structure.id());
        }
    }
    return out;
}

}  // namespace enerbridge
