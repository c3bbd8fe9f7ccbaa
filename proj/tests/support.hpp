#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "enerbridge/bridge.hpp"
#include "enerbridge/predictor.hpp"
#include "enerbridge/rng.hpp"
#include "enerbridge/structure.hpp"
#include "enerbridge/world.hpp"

namespace testing {

using namespace enerbridge;

inline Sequence seq(std::vector<int> tokens, int K) { return Sequence(std::move(tokens), K); }

/// Features: chain, degree/4, relative position, then `env` seeded channels.
inline Matrix simple_features(const std::vector<int>& chain_of, const std::vector<std::pair<int, int>>& contacts,
                              int env, std::uint64_t seed) {
    const int L = static_cast<int>(chain_of.size());
    Matrix f(static_cast<size_t>(L), static_cast<size_t>(feature::kFirstEnv + env));
    std::vector<int> degree(static_cast<size_t>(L), 0);
    for (auto [i, j] : contacts) {
        ++degree[static_cast<size_t>(i)];
        ++degree[static_cast<size_t>(j)];
    }
    Rng rng(seed);
    for (int i = 0; i < L; ++i) {
        const auto r = static_cast<size_t>(i);
        f(r, feature::kChain) = chain_of[r];
        f(r, feature::kDegree) = degree[r] / 4.0;
        f(r, feature::kRelativePos) = L > 1 ? static_cast<double>(i) / (L - 1) : 0.0;
        for (int c = 0; c < env; ++c) f(r, static_cast<size_t>(feature::kFirstEnv + c)) = rng.uniform(-1.0, 1.0);
    }
    return f;
}

inline StructureContext make_structure(std::vector<int> chain_of, std::vector<std::pair<int, int>> contacts,
                                       int env = 0, std::string id = "t0", std::uint64_t seed = 1) {
    Matrix f = simple_features(chain_of, contacts, env, seed);
    return StructureContext(std::move(id), std::move(chain_of), std::move(contacts), std::move(f));
}

/// L=3, chains (0, 0, 1), contacts (0,1) intra and (1,2) inter.
inline StructureContext tiny_complex() { return make_structure({0, 0, 1}, {{0, 1}, {1, 2}}); }

inline PredictorParams scaled_params(std::uint64_t seed, int d, int K, int T, int f, double scale) {
    PredictorParams p = init_params(seed, d, K, T, f);
    p.for_each([&](const char*, Matrix& m) {
        for (double& v : m.flat()) v *= scale;
    });
    return p;
}

inline Sequence random_sequence(Rng& rng, int L, int K) {
    std::vector<int> t(static_cast<size_t>(L));
    for (int& v : t) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(K)));
    return Sequence(t, K);
}

struct GradCheck {
    double max_rel = 0.0;
    std::string worst;
    int checked = 0;
};

/// Central differences on every parameter entry against `analytic`.
/// Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheck finite_difference_check(const LossEvaluator& loss, const PredictorParams& params,
                                         const GradientBundle& analytic, double h = 1e-4, double floor = 1e-8) {
    GradCheck out;
    PredictorParams probe = params;
    std::vector<std::pair<std::string, Matrix*>> tables;
    probe.for_each([&](const char* name, Matrix& m) { tables.emplace_back(name, &m); });
    std::vector<const Matrix*> grads;
    analytic.for_each([&](const char*, const Matrix& m) { grads.push_back(&m); });
    for (size_t b = 0; b < tables.size(); ++b) {
        auto flat = tables[b].second->flat();
        const auto g = grads[b]->flat();
        for (size_t k = 0; k < flat.size(); ++k) {
            const double saved = flat[k];
            flat[k] = saved + h;
            const double up = loss(probe, nullptr);
            flat[k] = saved - h;
            const double down = loss(probe, nullptr);
            flat[k] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double rel = std::abs(g[k] - numeric) / std::max({std::abs(g[k]), std::abs(numeric), floor});
            ++out.checked;
            if (rel > out.max_rel) {
                out.max_rel = rel;
                out.worst = tables[b].first + "[" + std::to_string(k) + "] analytic " + std::to_string(g[k]) +
                            " numeric " + std::to_string(numeric);
            }
        }
    }
    return out;
}

}  // namespace testing
