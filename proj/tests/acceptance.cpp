// Acceptance run: one PASS/FAIL line per criterion. Criteria 5-8 and 10 share
// two full `reproduce` runs whose artifacts are re-checked here with
// independent oracles rather than trusting the report's own verdicts.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "enerbridge/io.hpp"
#include "enerbridge/metrics.hpp"
#include "enerbridge/objectives.hpp"
#include "enerbridge/reproduce.hpp"
#include "support.hpp"

using namespace enerbridge;
namespace fs = std::filesystem;
using testing::seq;

namespace {

using Clock = std::chrono::steady_clock;
using V = std::vector<double>;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
        }
    }
    void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(double v, int digits = 4) {
    std::ostringstream ss;
    ss.precision(digits);
    ss << v;
    return ss.str();
}

int report_line(int id, const std::string& name, const Outcome& o, double secs, double limit) {
    const bool ok = o.pass && (limit <= 0.0 || secs < limit);
    std::string detail = o.detail;
    if (limit > 0.0 && secs >= limit) detail += "; runtime limit " + fmt(limit) + " s exceeded";
    std::cout << "criterion " << id << " (" << name << "): " << (ok ? "PASS" : "FAIL") << " [" << fmt(secs, 3) << " s] "
              << detail << std::endl;
    return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// Brute-force oracles.

double oracle_rank(const V& x, size_t i) {
    double r = 1.0;
    for (size_t j = 0; j < x.size(); ++j) {
        if (j == i) continue;
        if (x[j] < x[i]) r += 1.0;
        if (x[j] == x[i]) r += 0.5;
    }
    return r;
}

// Pairwise-difference form of the Pearson correlation.
std::optional<double> oracle_pearson(const V& x, const V& y) {
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < x.size(); ++i)
        for (size_t j = i + 1; j < x.size(); ++j) {
            sxy += (x[i] - x[j]) * (y[i] - y[j]);
            sxx += (x[i] - x[j]) * (x[i] - x[j]);
            syy += (y[i] - y[j]) * (y[i] - y[j]);
        }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

std::optional<double> oracle_spearman(const V& x, const V& y) {
    V rx, ry;
    for (size_t i = 0; i < x.size(); ++i) {
        rx.push_back(oracle_rank(x, i));
        ry.push_back(oracle_rank(y, i));
    }
    return oracle_pearson(rx, ry);
}

std::optional<double> oracle_auroc(const V& s, const std::vector<int>& pos) {
    double wins = 0.0, pairs = 0.0;
    for (size_t i = 0; i < s.size(); ++i)
        for (size_t j = 0; j < s.size(); ++j) {
            if (!pos[i] || pos[j]) continue;
            pairs += 1.0;
            wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    if (pairs == 0.0) return std::nullopt;
    return wins / pairs;
}

double oracle_median(V v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Coarse-to-fine grid search over (slope, intercept) down to a 1e-3 step.
// Inputs keep x values at least 0.3 apart so the optimum lies inside the grid.
double grid_fit(const V& x, const V& y, bool absolute) {
    auto err = [&](double a, double b) {
        double e = 0.0;
        for (size_t i = 0; i < x.size(); ++i) {
            const double r = a * x[i] + b - y[i];
            e += absolute ? std::abs(r) : r * r;
        }
        e /= static_cast<double>(x.size());
        return absolute ? e : std::sqrt(e);
    };
    double best = 1e300, ca = 0.0, cb = 0.0;
    for (double a = -15.0; a <= 15.0; a += 0.05)
        for (double b = -15.0; b <= 15.0; b += 0.05)
            if (const double e = err(a, b); e < best) best = e, ca = a, cb = b;
    for (double step : {0.01, 0.001}) {
        const double a0 = ca, b0 = cb;
        for (int i = -60; i <= 60; ++i)
            for (int j = -60; j <= 60; ++j)
                if (const double e = err(a0 + i * step, b0 + j * step); e < best)
                    best = e, ca = a0 + i * step, cb = b0 + j * step;
    }
    return best;
}

double oracle_zscore(const std::vector<V>& table, size_t target) {
    double total = 0.0;
    const size_t methods = table[0].size();
    for (size_t m = 0; m < methods; ++m) {
        double mu = 0.0;
        for (const auto& row : table) mu += row[m];
        mu /= static_cast<double>(table.size());
        double var = 0.0;
        for (const auto& row : table) var += (row[m] - mu) * (row[m] - mu);
        const double sd = std::sqrt(var / static_cast<double>(table.size()));
        if (sd > 0.0) total += (table[target][m] - mu) / sd;
    }
    return std::exp(total / static_cast<double>(methods));
}

// Every vector in {0..base-1}^n.
void for_each_vector(int n, int base, const std::function<void(const V&)>& fn) {
    V v(static_cast<size_t>(n), 0.0);
    long total = 1;
    for (int i = 0; i < n; ++i) total *= base;
    for (long code = 0; code < total; ++code) {
        long c = code;
        for (int i = 0; i < n; ++i) {
            v[static_cast<size_t>(i)] = static_cast<double>(c % base);
            c /= base;
        }
        fn(v);
    }
}

// Term-by-term Potts energy straight from the stored tables.
double oracle_energy(const WorldEntry& e, const std::vector<int>& y) {
    double E = 0.0;
    for (size_t i = 0; i < y.size(); ++i) E += e.potts.fields()(i, static_cast<size_t>(y[i]));
    const auto& pairs = e.structure.contact_pairs();
    for (size_t c = 0; c < pairs.size(); ++c)
        E += e.potts.couplings()[c](static_cast<size_t>(y[static_cast<size_t>(pairs[c].first)]),
                                    static_cast<size_t>(y[static_cast<size_t>(pairs[c].second)]));
    return E;
}

std::vector<Json> read_jsonl(const fs::path& p) {
    std::vector<Json> out;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(Json::parse(line));
    return out;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
    Outcome o;
    const int K = 3;
    const NoiseSchedule s = make_cosine_schedule(3);
    double worst = 0.0;
    for (int x = 0; x < K; ++x)
        for (int y = 0; y < K; ++y)
            for (int t = 0; t <= s.T; ++t) {
                // Enumerate every trajectory z_1..z_t.
                V oracle(K, 0.0);
                long total = 1;
                for (int k = 0; k < t; ++k) total *= K;
                for (long code = 0; code < total; ++code) {
                    long c = code;
                    int prev = x;
                    double p = 1.0;
                    for (int k = 0; k < t; ++k) {
                        const int next = static_cast<int>(c % K);
                        c /= K;
                        const double beta = s.betas[static_cast<size_t>(k)];
                        p *= (next == prev ? beta : 0.0) + (next == y ? 1.0 - beta : 0.0);
                        prev = next;
                    }
                    oracle[static_cast<size_t>(prev)] += p;
                }
                const auto got = forward_marginal(x, y, t, s, K);
                for (int k = 0; k < K; ++k) worst = std::max(worst, std::abs(got[static_cast<size_t>(k)] - oracle[static_cast<size_t>(k)]));
            }
    o.require(worst <= 1e-12, "enumeration mismatch " + fmt(worst));
    o.note("enumeration max error " + fmt(worst));

    int pinned = 0;
    const NoiseSchedule s5 = make_cosine_schedule(5);
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        Rng rng(seed, 1);
        const Sequence X = testing::random_sequence(rng, 8, K), Y = testing::random_sequence(rng, 8, K);
        pinned += forward_sample(X, Y, s5.T, s5, seed) == Y;
    }
    o.require(pinned == 1000, "pinning held for " + std::to_string(pinned) + "/1000 seeds");

    double worst_tv = 0.0;
    const int N = 10000;
    for (int x = 0; x < K; ++x)
        for (int y = 0; y < K; ++y)
            for (int t = 0; t <= s.T; ++t) {
                V freq(K, 0.0);
                for (int n = 0; n < N; ++n)
                    freq[static_cast<size_t>(forward_sample(seq({x}, K), seq({y}, K), t, s, derive_seed(99, {static_cast<std::uint64_t>(n)}))[0])] += 1.0 / N;
                const auto p = forward_marginal(x, y, t, s, K);
                double tv = 0.0;
                for (int k = 0; k < K; ++k) tv += 0.5 * std::abs(freq[static_cast<size_t>(k)] - p[static_cast<size_t>(k)]);
                worst_tv = std::max(worst_tv, tv);
            }
    o.require(worst_tv <= 0.02, "TV " + fmt(worst_tv));
    o.note("max TV " + fmt(worst_tv));
    return o;
}

Outcome criterion2() {
    Outcome o;
    const int d = 4, K = 3, T = 5;
    const auto S = testing::tiny_complex();
    const NoiseSchedule s = make_cosine_schedule(T);
    const PredictorParams p = testing::scaled_params(2024, d, K, T, S.feature_width(), 2.0);
    const PredictorParams ref = testing::scaled_params(7, d, K, T, S.feature_width(), 2.0);
    const Sequence X = seq({1, 2, 0}, K), yw = seq({0, 1, 2}, K), yl = seq({2, 0, 0}, K);
    ContextMap contexts{{"t0", DesignContext{S, S.unbound(), X}}};
    const std::vector<PreferencePair> pairs{{"t0", yw, yl, -2.0}, {"t0", seq({2, 1, 1}, K), seq({0, 0, 1}, K), 1.5}};
    const EnergyLossState state{0.8, 2, 31};
    const DpoConfig dpo{0.1, OmegaMode::constant, T};
    std::uint64_t seed = 0;
    while (refine_mask(forward_sample(X, yw, 2, s, seed), yw) == std::vector<int>(3, 0)) ++seed;

    const std::vector<std::pair<std::string, LossEvaluator>> losses{
        {"pretrain", [&](const PredictorParams& q, GradientBundle* g) { return pretrain_loss(q, X, yw, S, 2, s, seed, g); }},
        {"dpo", [&](const PredictorParams& q, GradientBundle* g) { return bridge_dpo_loss(q, ref, S, X, yw, yl, 3, s, dpo, 99, g); }},
        {"energy", [&](const PredictorParams& q, GradientBundle* g) { return energy_loss(q, state, pairs, contexts, s, g); }},
        {"total", [&](const PredictorParams& q, GradientBundle* g) {
             const double a = bridge_dpo_terms(q, ref, S, X, yw, yl, 3, s, dpo, 99, g).loss;
             const double b = energy_loss(q, state, pairs, contexts, s, g, nullptr, 0.5);
             return total_loss(a, b, {0.5});
         }}};
    for (const auto& [name, loss] : losses) {
        const auto check = testing::finite_difference_check(loss, p, grad(loss, p));
        o.require(check.max_rel <= 1e-4, name + " rel err " + fmt(check.max_rel) + " at " + check.worst);
        o.note(name + " " + fmt(check.max_rel, 2));
    }
    return o;
}

Outcome criterion3() {
    Outcome o;
    const int K = 4, L = 5, T = 6;
    const auto S = testing::make_structure({0, 0, 0, 1, 1}, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {0, 4}}, 2);
    const NoiseSchedule s = make_cosine_schedule(T);
    Rng rng(3);
    double worst = 0.0;
    int monotone = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const PredictorParams p = testing::scaled_params(rng.next(), 6, K, T, S.feature_width(), 0.5 + 3.0 * rng.uniform());
        const PredictorParams q = testing::scaled_params(rng.next(), 6, K, T, S.feature_width(), 2.0);
        const DpoConfig cfg{0.01 + rng.uniform(), trial % 2 ? OmegaMode::constant : OmegaMode::loss_weight, T};
        const Sequence X = testing::random_sequence(rng, L, K), yw = testing::random_sequence(rng, L, K),
                       yl = testing::random_sequence(rng, L, K);
        const int t = static_cast<int>(rng.below(T));
        const std::uint64_t seed = rng.next();
        worst = std::max(worst, std::abs(bridge_dpo_loss(p, p, S, X, yw, yl, t, s, cfg, seed) - std::numbers::ln2));

        const DpoTerms terms = bridge_dpo_terms(q, p, S, X, yw, yl, t, s, cfg, seed);
        const double scale = cfg.beta_dpo * T * omega_weight(cfg.omega, t, s);
        const double shrunk = -scale * ((0.9 * terms.err_policy_winner - terms.err_ref_winner) -
                                        (terms.err_policy_loser - terms.err_ref_loser));
        // A zero winner error or a vanishing weight leaves nothing to shrink.
        const bool movable = terms.err_policy_winner > 0.0 && scale > 0.0;
        monotone += !movable || neg_log_sigmoid(shrunk) < terms.loss;
    }
    o.require(worst <= 1e-12, "ln 2 deviation " + fmt(worst));
    o.require(monotone == 100, "monotonicity held in " + std::to_string(monotone) + "/100");
    o.note("max |loss - ln 2| " + fmt(worst) + ", monotone " + std::to_string(monotone) + "/100");
    return o;
}

Outcome criterion4() {
    Outcome o;
    const int K = 5, T = 6;
    const auto S = testing::make_structure({0, 0, 0, 1, 1, 1}, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {1, 4}}, 2);
    const NoiseSchedule s = make_cosine_schedule(T);
    Rng rng(4);
    int exact_zero = 0, zero_kbt = 0;
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const PredictorParams p = testing::scaled_params(rng.next(), 6, K, T, S.feature_width(), 2.0);
        const DesignContext ctx{S, S.unbound(), testing::random_sequence(rng, 6, K)};
        const Sequence yw = testing::random_sequence(rng, 6, K), yl = testing::random_sequence(rng, 6, K);
        EnergyLossState st{0.2 + 2.0 * rng.uniform(), 1 + static_cast<int>(rng.below(4)), rng.next()};
        exact_zero += ddg_predict(p, ctx, yw, yw, s, st) == 0.0;
        auto ll = [&](const Sequence& y, const StructureContext& c) {
            return model_log_likelihood(p, ctx.prior, y, c, s, st.samples, st.eval_seed);
        };
        const double composed = -st.kbt * ((ll(yw, ctx.bound) - ll(yw, ctx.unbound)) - (ll(yl, ctx.bound) - ll(yl, ctx.unbound)));
        worst = std::max(worst, std::abs(ddg_predict(p, ctx, yw, yl, s, st) - composed));
        st.kbt = 0.0;
        zero_kbt += ddg_predict(p, ctx, yw, yl, s, st) == 0.0;
    }
    o.require(exact_zero == 50, "ddG(Y, Y) = 0 in " + std::to_string(exact_zero) + "/50");
    o.require(zero_kbt == 50, "kbt = 0 gave 0 in " + std::to_string(zero_kbt) + "/50");
    o.require(worst <= 1e-12, "composition error " + fmt(worst));
    o.note("composition max error " + fmt(worst));
    return o;
}

Outcome criterion9() {
    Outcome o;
    double worst_rank = 0.0, worst_pearson = 0.0, worst_auroc = 0.0, worst_rmse = 0.0, worst_mae = 0.0, worst_z = 0.0;
    int definedness = 0;
    Rng rng(9);

    for (int n = 2; n <= 6; ++n) {
        // Spearman: every x in {0..n-1}^n (all tie patterns) against several y,
        // including one with ties.
        std::vector<V> ys;
        for (int k = 0; k < 4; ++k) {
            V y(static_cast<size_t>(n));
            for (auto& v : y) v = static_cast<double>(rng.below(static_cast<std::uint64_t>(n)));
            ys.push_back(y);
        }
        V perm(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
        ys.push_back(perm);
        for_each_vector(n, n, [&](const V& x) {
            for (const V& y : ys) {
                const auto a = spearman(x, y), b = oracle_spearman(x, y);
                definedness += a.has_value() != b.has_value();
                if (a && b) worst_rank = std::max(worst_rank, std::abs(*a - *b));
            }
        });
        // Every pair of permutations.
        std::vector<V> perms;
        V pv = perm;
        do perms.push_back(pv);
        while (std::next_permutation(pv.begin(), pv.end()));
        for (const V& a : perms)
            for (const V& b : perms) {
                const auto s1 = spearman(a, b), s2 = oracle_spearman(a, b);
                if (s1 && s2) worst_rank = std::max(worst_rank, std::abs(*s1 - *s2));
                else definedness += 1;
            }

        // Pearson on random reals and on integer grids.
        for (int k = 0; k < 2000; ++k) {
            V x(static_cast<size_t>(n)), y(static_cast<size_t>(n));
            for (size_t i = 0; i < x.size(); ++i) {
                x[i] = k % 2 ? rng.uniform(-3, 3) : static_cast<double>(rng.below(3));
                y[i] = k % 3 ? rng.uniform(-3, 3) : static_cast<double>(rng.below(3));
            }
            const auto a = pearson(x, y), b = oracle_pearson(x, y);
            definedness += a.has_value() != b.has_value();
            if (a && b) worst_pearson = std::max(worst_pearson, std::abs(*a - *b));
        }

        // AUROC: every score vector in {0,1,2}^n against every labelling.
        for_each_vector(n, 3, [&](const V& sc) {
            for (int mask = 0; mask < (1 << n); ++mask) {
                std::vector<int> pos(static_cast<size_t>(n));
                for (int i = 0; i < n; ++i) pos[static_cast<size_t>(i)] = (mask >> i) & 1;
                const auto a = auroc(sc, pos), b = oracle_auroc(sc, pos);
                definedness += a.has_value() != b.has_value();
                if (a && b) worst_auroc = std::max(worst_auroc, std::abs(*a - *b));
            }
        });

        // Affine fits against a grid search.
        for (int k = 0; k < 4; ++k) {
            V x(static_cast<size_t>(n)), y(static_cast<size_t>(n));
            for (size_t i = 0; i < x.size(); ++i) {
                x[i] = -1.0 + 0.4 * static_cast<double>(i) + rng.uniform(-0.05, 0.05);
                y[i] = rng.uniform(-1.5, 1.5);
            }
            worst_rmse = std::max(worst_rmse, std::abs(least_squares_fit(x, y).error - grid_fit(x, y, false)));
            worst_mae = std::max(worst_mae, std::abs(least_absolute_fit(x, y).error - grid_fit(x, y, true)));
        }

        // ZScore on random tables of n models.
        for (int k = 0; k < 200; ++k) {
            std::vector<V> table(static_cast<size_t>(n), V(3));
            for (auto& row : table)
                for (auto& v : row) v = k % 4 ? rng.uniform(-5, 5) : static_cast<double>(rng.below(2));
            for (size_t target = 0; target < table.size(); ++target)
                worst_z = std::max(worst_z, std::abs(zscore(table, target) - oracle_zscore(table, target)));
        }
    }

    // Recovery and bucketed medians.
    int recovery_mismatch = 0;
    for (int n = 1; n <= 6; ++n)
        for_each_vector(2 * n, 2, [&](const V& v) {
            std::vector<int> a, b;
            for (int i = 0; i < n; ++i) {
                a.push_back(static_cast<int>(v[static_cast<size_t>(i)]));
                b.push_back(static_cast<int>(v[static_cast<size_t>(n + i)]));
            }
            int hits = 0;
            for (int i = 0; i < n; ++i) hits += a[static_cast<size_t>(i)] == b[static_cast<size_t>(i)];
            recovery_mismatch += recovery_rate(Sequence(a, 2), Sequence(b, 2)) != 100.0 * hits / n;
        });
    const std::vector<int> bucket_lengths{30, 250, 700, 1500};
    for (int n = 1; n <= 6; ++n)
        for (int k = 0; k < 300; ++k) {
            std::vector<int> lengths;
            V rec;
            for (int i = 0; i < n; ++i) {
                lengths.push_back(bucket_lengths[rng.below(4)]);
                rec.push_back(static_cast<double>(rng.below(101)));
            }
            std::map<std::string, V> groups;
            for (int i = 0; i < n; ++i) {
                groups["full"].push_back(rec[static_cast<size_t>(i)]);
                const int L = lengths[static_cast<size_t>(i)];
                if (L < 100) groups["short"].push_back(rec[static_cast<size_t>(i)]);
                else if (L < 500) groups["medium"].push_back(rec[static_cast<size_t>(i)]);
                else if (L < 1000) groups["long"].push_back(rec[static_cast<size_t>(i)]);
            }
            const auto got = bucket_medians(lengths, rec);
            if (got.size() != groups.size()) ++recovery_mismatch;
            for (const auto& [bucket, values] : groups)
                if (!got.count(bucket) || got.at(bucket) != oracle_median(values)) ++recovery_mismatch;
        }

    const bool z_identity = zscore({{1.0, -2.0}, {3.0, 0.0}, {2.0, -1.0}}, 2) == 1.0;
    o.require(definedness == 0, std::to_string(definedness) + " definedness disagreements");
    o.require(worst_rank <= 1e-12, "Spearman error " + fmt(worst_rank));
    o.require(worst_pearson <= 1e-12, "Pearson error " + fmt(worst_pearson));
    o.require(worst_auroc <= 1e-12, "AUROC error " + fmt(worst_auroc));
    o.require(worst_rmse <= 1e-3, "RMSE fit error " + fmt(worst_rmse));
    o.require(worst_mae <= 1e-3, "MAE fit error " + fmt(worst_mae));
    o.require(worst_z <= 1e-12, "ZScore error " + fmt(worst_z));
    o.require(recovery_mismatch == 0, std::to_string(recovery_mismatch) + " recovery mismatches");
    o.require(z_identity, "ZScore e^0 case is not exactly 1");
    o.note("spearman " + fmt(worst_rank, 2) + ", pearson " + fmt(worst_pearson, 2) + ", auroc " + fmt(worst_auroc, 2) +
           ", rmse fit " + fmt(worst_rmse, 2) + ", mae fit " + fmt(worst_mae, 2) + ", zscore " + fmt(worst_z, 2));
    return o;
}

// ---------------------------------------------------------------------------
// Criteria 5-8 from the artifacts of one reproduce run.

struct RunArtifacts {
    std::vector<WorldEntry> world;
    std::map<std::string, const WorldEntry*> by_id;
    std::vector<std::string> test_ids;
    // model -> structure -> designs
    std::map<std::string, std::map<std::string, std::vector<std::vector<int>>>> designs;
    // model -> (pred, label)
    std::map<std::string, std::pair<V, V>> ddg;
    Json report;
};

RunArtifacts load_run(const fs::path& dir) {
    RunArtifacts a;
    a.world = load_world(dir / "world.jsonl");
    for (const auto& e : a.world) {
        a.by_id[e.structure.id()] = &e;
        if (e.split == "test") a.test_ids.push_back(e.structure.id());
    }
    for (const auto& j : read_jsonl(dir / "designs.jsonl"))
        a.designs[j["model"]][j["structure_id"]].push_back(j["tokens"].get<std::vector<int>>());
    for (const auto& j : read_jsonl(dir / "ddg_predictions.jsonl")) {
        auto& [p, l] = a.ddg[j["model"]];
        p.push_back(j["pred"].get<double>());
        l.push_back(j["label"].get<double>());
    }
    a.report = read_json(dir / "report.json");
    return a;
}

// Per-structure mean of `value(design)` over the test set, in test-id order.
V per_structure(const RunArtifacts& a, const std::string& model,
                const std::function<double(const WorldEntry&, const std::vector<int>&)>& value) {
    V out;
    for (const auto& id : a.test_ids) {
        const auto& list = a.designs.at(model).at(id);
        double sum = 0.0;
        for (const auto& d : list) sum += value(*a.by_id.at(id), d);
        out.push_back(sum / static_cast<double>(list.size()));
    }
    return out;
}

double recovery_of(const WorldEntry& e, const std::vector<int>& d) {
    int hits = 0;
    for (size_t i = 0; i < d.size(); ++i) hits += d[i] == e.native[i];
    return 100.0 * hits / static_cast<double>(d.size());
}

bool report_says(const Json& report, int id) {
    for (const auto& c : report["criteria"])
        if (c["id"] == id) return c["pass"].get<bool>();
    return false;
}

Outcome criterion5(const RunArtifacts& a) {
    Outcome o;
    const V ref = per_structure(a, "ref", oracle_energy);
    const V full = per_structure(a, "full", oracle_energy);
    V diff;
    for (size_t i = 0; i < ref.size(); ++i) diff.push_back(full[i] - ref[i]);
    const double n = static_cast<double>(diff.size());
    double mu = 0.0;
    for (double d : diff) mu += d / n;
    double ss = 0.0;
    for (double d : diff) ss += (d - mu) * (d - mu);
    const double se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    double mean_ref = 0.0, mean_full = 0.0;
    for (size_t i = 0; i < ref.size(); ++i) {
        mean_ref += ref[i] / n;
        mean_full += full[i] / n;
    }
    const double smoke = a.report["smoke"]["recovery"].get<double>();
    const auto pairs = a.report["pairs"].get<int>();
    o.require(a.world.size() == 60, "world has " + std::to_string(a.world.size()) + " structures");
    o.require(a.test_ids.size() == 26, std::to_string(a.test_ids.size()) + " held-out structures");
    o.require(pairs >= 1000 && pairs <= 2000, std::to_string(pairs) + " preference pairs");
    o.require(smoke >= 98.0, "smoke recovery " + fmt(smoke));
    o.require(mean_full < mean_ref, "fine-tuned mean energy is not lower");
    o.require(-mu > 2.0 * se, "improvement " + fmt(-mu) + " within 2 SE (" + fmt(2.0 * se) + ")");
    o.require(report_says(a.report, 5), "report disagrees");
    o.note("smoke " + fmt(smoke) + "%, pairs " + std::to_string(pairs) + ", energy ref " + fmt(mean_ref) + " full " +
           fmt(mean_full) + ", paired diff " + fmt(mu) + " (2 SE " + fmt(2.0 * se) + ")");
    return o;
}

Outcome criterion6(const RunArtifacts& a, double& rec_full) {
    Outcome o;
    const double ref = oracle_median(per_structure(a, "ref", recovery_of));
    rec_full = oracle_median(per_structure(a, "full", recovery_of));
    o.require(std::abs(rec_full - ref) <= 5.0, "gap " + fmt(rec_full - ref));
    o.require(report_says(a.report, 6), "report disagrees");
    o.note("median recovery ref " + fmt(ref) + "%, full " + fmt(rec_full) + "%");
    return o;
}

Outcome criterion7(const RunArtifacts& a) {
    Outcome o;
    const auto& [pf, lf] = a.ddg.at("full");
    const auto& [pd, ld] = a.ddg.at("dpo_only");
    const auto sp_full = oracle_spearman(pf, lf);
    const auto sp_dpo = oracle_spearman(pd, ld);
    V score;
    std::vector<int> pos;
    for (size_t i = 0; i < pf.size(); ++i) {
        score.push_back(-pf[i]);
        pos.push_back(lf[i] < 0.0);
    }
    const auto au = oracle_auroc(score, pos);
    o.require(sp_full && *sp_full >= 0.5, "Spearman " + fmt(sp_full.value_or(NAN)));
    o.require(au && *au >= 0.7, "AUROC " + fmt(au.value_or(NAN)));
    o.require(sp_full && sp_dpo && *sp_dpo < *sp_full, "w/o-Energy Spearman not lower");
    o.require(report_says(a.report, 7), "report disagrees");
    o.note(std::to_string(pf.size()) + " mutant pairs, Spearman full " + fmt(sp_full.value_or(NAN)) + ", AUROC " +
           fmt(au.value_or(NAN)) + ", Spearman w/o Energy " + fmt(sp_dpo.value_or(NAN)));
    return o;
}

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(ENERBRIDGE_CLI) + " --quiet " + args + " >" + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome criterion8(const RunArtifacts& a, const fs::path& run_dir, double rec_full) {
    Outcome o;
    const double rec_energy = oracle_median(per_structure(a, "energy_only", recovery_of));
    o.require(rec_energy < rec_full, "w/o-DPO recovery " + fmt(rec_energy) + " not below " + fmt(rec_full));
    o.require(report_says(a.report, 8), "report disagrees");
    o.note("median recovery w/o DPO " + fmt(rec_energy) + "% < full " + fmt(rec_full) + "%");

    // Both ablations from the same command line, differing only in --mode.
    const std::string common = " finetune --world " + (run_dir / "world.jsonl").string() + " --pairs " +
                               (run_dir / "pairs.jsonl").string() + " --ref " + (run_dir / "ref.ckpt.json").string() +
                               " --epochs 1 --samples 1 --mode ";
    for (const char* mode : {"dpo_only", "energy_only"}) {
        const fs::path out = run_dir.parent_path() / (std::string("cli_") + mode + ".json");
        const int code = run_cli("--out " + out.string() + common + mode, run_dir.parent_path() / "cli.log");
        o.require(code == 0, std::string("CLI --mode ") + mode + " exited " + std::to_string(code));
    }
    if (o.pass) o.note("CLI ablations ran with only --mode changed");
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "enerbridge-acceptance";
    fs::remove_all(work);
    fs::create_directories(work);
    int failures = 0;

    auto timed = [&](int id, const std::string& name, double limit, const std::function<Outcome()>& fn) {
        const auto start = Clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o.require(false, std::string("exception: ") + e.what());
        }
        failures += report_line(id, name, o, seconds_since(start), limit);
    };

    timed(1, "bridge-kernel correctness", 10.0, criterion1);
    timed(2, "gradient fidelity", 30.0, criterion2);
    timed(3, "DPO identities", 10.0, criterion3);
    timed(4, "Boltzmann-alignment identities", 5.0, criterion4);

    const ReproduceConfig config = default_reproduce_config(7);
    const fs::path run1 = work / "run1", run2 = work / "run2";
    double run_secs = 0.0;
    std::string run_error;
    {
        const auto start = Clock::now();
        try {
            reproduce(config, run1, [](const std::string& msg) { std::cerr << "  [run 1] " << msg << std::endl; });
        } catch (const std::exception& e) {
            run_error = e.what();
        }
        run_secs = seconds_since(start);
    }
    if (!run_error.empty()) {
        Outcome o;
        o.require(false, "reproduce failed: " + run_error);
        for (int id : {5, 6, 7, 8}) failures += report_line(id, "pipeline", o, run_secs, 0.0);
    } else {
        const RunArtifacts a = load_run(run1);
        double rec_full = 0.0;
        timed(5, "energy direction", 0.0, [&] {
            Outcome o = criterion5(a);
            o.require(run_secs < 1800.0, "pipeline took " + fmt(run_secs) + " s");
            o.note("pipeline " + fmt(run_secs, 4) + " s");
            return o;
        });
        timed(6, "recovery preservation", 0.0, [&] { return criterion6(a, rec_full); });
        timed(7, "ddG ranking", 0.0, [&] {
            Outcome o = criterion7(a);
            o.require(run_secs < 600.0, "pipeline took " + fmt(run_secs) + " s");
            return o;
        });
        timed(8, "ablation structure", 0.0, [&] { return criterion8(a, run1, rec_full); });
    }

    timed(9, "metric-kit oracles", 60.0, criterion9);

    timed(10, "reproducibility", 0.0, [&] {
        Outcome o;
        reproduce(config, run2, [](const std::string& msg) { std::cerr << "  [run 2] " << msg << std::endl; });
        int files = 0;
        for (const auto& entry : fs::directory_iterator(run1)) {
            const fs::path twin = run2 / entry.path().filename();
            ++files;
            o.require(fs::exists(twin) && slurp(entry.path()) == slurp(twin), entry.path().filename().string() + " differs");
        }
        int second = 0;
        for (const auto& entry : fs::directory_iterator(run2)) second += entry.is_regular_file();
        o.require(second == files, "runs wrote different file sets");
        o.note(std::to_string(files) + " files byte-identical across two runs");
        return o;
    });

    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
