#include "enerbridge/preferences.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "enerbridge/errors.hpp"
#include "enerbridge/rng.hpp"

namespace enerbridge {

namespace {

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[static_cast<std::size_t>(rng.below(i))]);
    }
}

std::uint64_t string_tag(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
    return h;
}

std::size_t pool_size(double frac, std::size_t n) {
    return static_cast<std::size_t>(std::ceil(frac * static_cast<double>(n) - 1e-9));
}

}  // namespace

std::vector<PreferencePair> build_pairs(const std::vector<MutantRecord>& records, const PairingConfig& config) {
    if (!(config.top_frac > 0.0 && config.top_frac <= 0.5) || !(config.bottom_frac > 0.0 && config.bottom_frac <= 0.5)) {
        throw ConfigError("pairing fractions must lie in (0, 0.5]");
    }
    if (config.pairs_per_structure < 1) throw ConfigError("pairs_per_structure must be positive");
    if (records.size() < 2) throw PairingError("need at least two scored records to pair");

    std::map<std::string, std::vector<const MutantRecord*>> by_structure;
    for (const auto& r : records) by_structure[r.structure_id].push_back(&r);

    std::vector<PreferencePair> out;
    for (auto& [id, group] : by_structure) {
        // Order-independent: score first, then tokens.
        std::stable_sort(group.begin(), group.end(), [](const MutantRecord* a, const MutantRecord* b) {
            if (a->score != b->score) return a->score < b->score;
            return a->tokens < b->tokens;
        });
        const std::size_t n = group.size();
        const std::size_t n_top = pool_size(config.top_frac, n);
        const std::size_t n_bottom = pool_size(config.bottom_frac, n);
        if (n < 2 || n_top == 0 || n_bottom == 0) throw PairingError("empty quantile pool for structure '" + id + "'");
        const std::size_t first_loser = n - n_bottom;
        const std::size_t product = n_top * n_bottom;
        const auto wanted = static_cast<std::size_t>(config.pairs_per_structure);

        Rng rng(config.seed, string_tag(id));
        std::vector<std::size_t> picks;
        if (product >= wanted) {
            // Partial Fisher-Yates over the index product: no repeats.
            std::vector<std::size_t> all(product);
            std::iota(all.begin(), all.end(), std::size_t{0});
            for (std::size_t k = 0; k < wanted; ++k) {
                const std::size_t j = k + static_cast<std::size_t>(rng.below(product - k));
                std::swap(all[k], all[j]);
                picks.push_back(all[k]);
            }
        } else {
            for (std::size_t k = 0; k < wanted; ++k) picks.push_back(static_cast<std::size_t>(rng.below(product)));
        }
        for (std::size_t p : picks) {
            const MutantRecord* w = group[p / n_bottom];
            const MutantRecord* l = group[first_loser + p % n_bottom];
            if (!(w->score < l->score)) continue;
            out.push_back({id, w->tokens, l->tokens, w->score - l->score});
        }
    }
    return out;
}

StructureSplit split_by_structure(std::vector<std::string> ids, std::array<double, 3> fractions,
                                  std::uint64_t seed) {
    for (double f : fractions) {
        if (!(f >= 0.0)) throw ConfigError("split fractions must be non-negative");
    }
    if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
        throw ConfigError("split fractions must sum to 1");
    }
    const std::size_t n = ids.size();
    const auto n_val = static_cast<std::size_t>(std::floor(fractions[1] * static_cast<double>(n) + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(fractions[2] * static_cast<double>(n) + 1e-9));
    const std::size_t nonzero = static_cast<std::size_t>(fractions[0] > 0) + (fractions[1] > 0) + (fractions[2] > 0);
    if (n < nonzero || n_val + n_test > n || (fractions[1] > 0 && n_val == 0) || (fractions[2] > 0 && n_test == 0) ||
        (fractions[0] > 0 && n_val + n_test == n)) {
        throw ConfigError("too few structure ids for the requested split");
    }
    std::sort(ids.begin(), ids.end());
    Rng rng(seed, 0x73706c74);
    shuffle(ids, rng);
    StructureSplit s;
    s.val.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_val));
    s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_val),
                  ids.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
    s.train.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), ids.end());
    for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->begin(), part->end());
    return s;
}

std::vector<std::vector<std::string>> kfold_by_structure(std::vector<std::string> ids, int k, std::uint64_t seed) {
    if (k < 2) throw ConfigError("k-fold needs k >= 2");
    if (static_cast<std::size_t>(k) > ids.size()) throw ConfigError("more folds than structure ids");
    std::sort(ids.begin(), ids.end());
    Rng rng(seed, 0x6b666c64);
    shuffle(ids, rng);
    const std::size_t base = ids.size() / static_cast<std::size_t>(k);
    const std::size_t extra = ids.size() % static_cast<std::size_t>(k);
    std::vector<std::vector<std::string>> folds(static_cast<std::size_t>(k));
    std::size_t pos = 0;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        const std::size_t size = base + (f < extra ? 1 : 0);
        folds[f].assign(ids.begin() + static_cast<std::ptrdiff_t>(pos),
                        ids.begin() + static_cast<std::ptrdiff_t>(pos + size));
        std::sort(folds[f].begin(), folds[f].end());
        pos += size;
    }
    return folds;
}

}  // namespace enerbridge
