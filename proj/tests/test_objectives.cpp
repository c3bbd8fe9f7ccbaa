#include <doctest.h>

#include <cmath>
#include <numbers>

#include "enerbridge/errors.hpp"
#include "enerbridge/objectives.hpp"
#include "support.hpp"

using namespace enerbridge;
using testing::seq;

namespace {

constexpr int kD = 4, kK = 3, kL = 3, kT = 5;

PredictorParams small_params(std::uint64_t seed, double scale = 2.0) {
    return testing::scaled_params(seed, kD, kK, kT, testing::tiny_complex().feature_width(), scale);
}

// Straight-line squared error sum_i sum_k (onehot(Y)_ik - p_ik)^2.
double sq_err(const Matrix& p, const Sequence& Y) {
    double e = 0.0;
    for (size_t i = 0; i < p.rows(); ++i)
        for (size_t k = 0; k < p.cols(); ++k) {
            const double d = (static_cast<int>(k) == Y[i] ? 1.0 : 0.0) - p(i, k);
            e += d * d;
        }
    return e;
}

double log_sigmoid(double x) { return -std::log1p(std::exp(-x)); }

}  // namespace

TEST_SUITE("objectives") {

TEST_CASE("pretrain loss examples") {
    const auto S = testing::make_structure({0}, {});
    PredictorParams flat = testing::scaled_params(1, 3, 4, 2, S.feature_width(), 1.0);
    flat.head.fill(0.0);
    flat.head_bias.fill(0.0);
    const NoiseSchedule s = NoiseSchedule::from_betas({1.0, 0.0});
    CHECK(loss_weight(1, s) == 1.0);
    const double loss = pretrain_loss(flat, seq({0}, 4), seq({2}, 4), S, 1, s, 0);
    CHECK(loss == doctest::Approx(-std::log(0.25)).epsilon(1e-14));
    CHECK(loss == doctest::Approx(1.3863).epsilon(1e-4));
    CHECK(pretrain_loss(flat, seq({2}, 4), seq({2}, 4), S, 1, s, 0) == 0.0);
    CHECK_THROWS_AS(pretrain_loss(flat, seq({0}, 4), seq({2}, 4), S, 2, s, 0), DomainError);
}

TEST_CASE("pretrain loss matches a straight-line evaluation") {
    const auto S = testing::tiny_complex();
    const NoiseSchedule s = make_cosine_schedule(kT);
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const PredictorParams p = small_params(100 + trial);
        const Sequence X = testing::random_sequence(rng, kL, kK);
        const Sequence Y = testing::random_sequence(rng, kL, kK);
        const int t = static_cast<int>(rng.below(kT));
        const std::uint64_t seed = rng.next();
        const Sequence z = forward_sample(X, Y, t, s, seed);
        const Matrix probs = predict(p, z, S, t);
        const double lambda = std::max(s.survival[static_cast<size_t>(t)] - s.survival[static_cast<size_t>(t) + 1], 1e-8);
        double expected = 0.0;
        for (int i = 0; i < kL; ++i)
            if (z[static_cast<size_t>(i)] != Y[static_cast<size_t>(i)])
                expected -= lambda * std::log(probs(static_cast<size_t>(i), static_cast<size_t>(Y[static_cast<size_t>(i)])));
        const double got = pretrain_loss(p, X, Y, S, t, s, seed);
        CHECK(got >= 0.0);
        CHECK(got == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("pretrain gradient vanishes at the minimum") {
    const auto S = testing::tiny_complex();
    const NoiseSchedule s = make_cosine_schedule(kT);
    PredictorParams p = small_params(3);
    p.head.fill(0.0);
    p.head_bias.fill(0.0);
    p.head_bias(0, 0) = 40.0;
    const Sequence Y = seq({0, 0, 0}, kK);
    const Sequence X = seq({1, 2, 1}, kK);
    GradientBundle g = PredictorParams::zeros(p.dims);
    pretrain_loss(p, X, Y, S, 2, s, 11, &g);
    double norm = 0.0;
    g.for_each([&](const char*, const Matrix& m) {
        for (double v : m.flat()) norm += v * v;
    });
    CHECK(std::sqrt(norm) < 1e-6);
}

TEST_CASE("DPO equals ln 2 at the reference") {
    const auto S = testing::tiny_complex();
    const NoiseSchedule s = make_cosine_schedule(kT);
    Rng rng(21);
    for (int trial = 0; trial < 100; ++trial) {
        const PredictorParams p = small_params(rng.next(), 1.0 + 3.0 * rng.uniform());
        DpoConfig cfg;
        cfg.beta_dpo = 0.01 + rng.uniform();
        cfg.T = kT;
        cfg.omega = trial % 2 ? OmegaMode::constant : OmegaMode::loss_weight;
        const double loss = bridge_dpo_loss(p, p, S, testing::random_sequence(rng, kL, kK),
                                            testing::random_sequence(rng, kL, kK),
                                            testing::random_sequence(rng, kL, kK),
                                            static_cast<int>(rng.below(kT)), s, cfg, rng.next());
        CHECK(std::abs(loss - std::numbers::ln2) <= 1e-12);
    }
}

TEST_CASE("DPO terms match a straight-line evaluation") {
    const auto S = testing::tiny_complex();
    const NoiseSchedule s = make_cosine_schedule(kT);
    Rng rng(33);
    for (int trial = 0; trial < 20; ++trial) {
        const PredictorParams p = small_params(rng.next());
        const PredictorParams r = small_params(rng.next());
        const Sequence zw = testing::random_sequence(rng, kL, kK), zl = testing::random_sequence(rng, kL, kK);
        const Sequence yw = testing::random_sequence(rng, kL, kK), yl = testing::random_sequence(rng, kL, kK);
        const int t = static_cast<int>(rng.below(kT));
        DpoConfig cfg{0.1, OmegaMode::constant, kT};
        const DpoTerms terms = dpo_terms_from_states(p, r, S, zw, zl, yw, yl, t, s, cfg);
        const double ew = sq_err(predict(p, zw, S, t), yw) - sq_err(predict(r, zw, S, t), yw);
        const double el = sq_err(predict(p, zl, S, t), yl) - sq_err(predict(r, zl, S, t), yl);
        const double inner = -0.1 * kT * 1.0 * (ew - el);
        CHECK(terms.inner == doctest::Approx(inner).epsilon(1e-12));
        CHECK(terms.loss == doctest::Approx(-log_sigmoid(inner)).epsilon(1e-12));
        CHECK(terms.loss > 0.0);

        // Swapping the preference direction negates the inner argument.
        const DpoTerms swapped = dpo_terms_from_states(p, r, S, zl, zw, yl, yw, t, s, cfg);
        CHECK(swapped.inner == -terms.inner);

        // Shrinking the policy's winner error by 10% lowers the loss.
        const double shrunk = -cfg.beta_dpo * cfg.T *
                              ((0.9 * terms.err_policy_winner - terms.err_ref_winner) -
                               (terms.err_policy_loser - terms.err_ref_loser));
        CHECK(neg_log_sigmoid(shrunk) < terms.loss);
    }
    CHECK(neg_log_sigmoid(0.0) == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
    CHECK(neg_log_sigmoid(800.0) == doctest::Approx(0.0));
    CHECK(neg_log_sigmoid(-800.0) == doctest::Approx(800.0));
}

TEST_CASE("model log-likelihood") {
    const auto S10 = testing::make_structure(std::vector<int>(10, 0), {{0, 1}, {1, 2}, {5, 6}}, 1);
    const NoiseSchedule s = make_cosine_schedule(kT);
    PredictorParams p = testing::scaled_params(2, 4, 20, kT, S10.feature_width(), 1.0);
    p.head.fill(0.0);
    p.head_bias.fill(0.0);
    Rng rng(4);
    const Sequence X = testing::random_sequence(rng, 10, 20), Y = testing::random_sequence(rng, 10, 20);
    const double uniform = model_log_likelihood(p, X, Y, S10, s, 4, 9);
    CHECK(uniform == doctest::Approx(-10.0 * std::log(20.0)).epsilon(1e-12));
    CHECK(uniform == doctest::Approx(-29.957).epsilon(1e-4));

    p.head_bias(0, 7) = 60.0;
    const Sequence sevens = seq(std::vector<int>(10, 7), 20);
    CHECK(std::abs(model_log_likelihood(p, X, sevens, S10, s, 4, 9)) < 1e-12);
    // A near-zero probability is clamped at the floor.
    const Sequence zeros = seq(std::vector<int>(10, 0), 20);
    CHECK(model_log_likelihood(p, X, zeros, S10, s, 4, 9) == doctest::Approx(10.0 * kLogProbFloor));

    const PredictorParams q = testing::scaled_params(5, 4, 20, kT, S10.feature_width(), 2.0);
    CHECK(model_log_likelihood(q, X, Y, S10, s, 4, 9) == model_log_likelihood(q, X, Y, S10, s, 4, 9));
    CHECK_THROWS_AS(model_log_likelihood(q, X, Y, S10, s, 0, 9), ConfigError);
}

TEST_CASE("Boltzmann ddG identities") {
    const auto S = testing::tiny_complex();
    const NoiseSchedule s = make_cosine_schedule(kT);
    const DesignContext ctx{S, S.unbound(), seq({1, 2, 0}, kK)};
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const PredictorParams p = small_params(rng.next());
        const Sequence yw = testing::random_sequence(rng, kL, kK), yl = testing::random_sequence(rng, kL, kK);
        EnergyLossState state{0.5 + rng.uniform(), 3, rng.next()};
        CHECK(ddg_predict(p, ctx, yw, yw, s, state) == 0.0);

        const auto ll = [&](const Sequence& y, const StructureContext& st) {
            return model_log_likelihood(p, ctx.prior, y, st, s, state.samples, state.eval_seed);
        };
        const double expected = -state.kbt * ((ll(yw, ctx.bound) - ll(yw, ctx.unbound)) - (ll(yl, ctx.bound) - ll(yl, ctx.unbound)));
        CHECK(std::abs(ddg_predict(p, ctx, yw, yl, s, state) - expected) <= 1e-12);

        state.kbt = 0.0;
        CHECK(ddg_predict(p, ctx, yw, yl, s, state) == 0.0);
    }
    const auto mono = testing::make_structure({0, 0, 0}, {{0, 1}, {1, 2}});
    const DesignContext single{mono, mono.unbound(), seq({0, 0, 0}, kK)};
    CHECK_THROWS_AS(ddg_predict(small_params(1), single, seq({0, 1, 2}, kK), seq({2, 1, 0}, kK), s, EnergyLossState{}),
                    DomainError);
}

TEST_CASE("energy loss examples") {
    const auto S = testing::tiny_complex();
    const NoiseSchedule s = make_cosine_schedule(kT);
    ContextMap contexts{{"t0", DesignContext{S, S.unbound(), seq({1, 2, 0}, kK)}}};
    const PredictorParams p = small_params(77);
    EnergyLossState state{1.0, 2, 5};
    std::vector<PreferencePair> pairs{{"t0", seq({0, 1, 2}, kK), seq({2, 2, 1}, kK), 0.0},
                                      {"t0", seq({1, 1, 0}, kK), seq({0, 2, 2}, kK), 0.0},
                                      {"t0", seq({2, 0, 1}, kK), seq({1, 0, 0}, kK), 0.0}};
    std::vector<double> preds;
    for (auto& pr : pairs) preds.push_back(ddg_predict(p, pr, contexts, s, state));

    auto exact = pairs;
    for (size_t k = 0; k < exact.size(); ++k) exact[k].ddg_label = preds[k];
    CHECK(energy_loss(p, state, exact, contexts, s) == 0.0);

    // One pair with prediction 1.0 against label 3.0.
    EnergyLossState unit = state;
    unit.kbt = state.kbt / preds[0];
    auto one = std::vector<PreferencePair>{pairs[0]};
    one[0].ddg_label = 3.0;
    CHECK(energy_loss(p, unit, one, contexts, s) == doctest::Approx(2.0).epsilon(1e-12));

    auto labelled = pairs;
    labelled[0].ddg_label = -1.0;
    labelled[1].ddg_label = 0.4;
    labelled[2].ddg_label = 2.5;
    const double hand = (std::abs(preds[0] + 1.0) + std::abs(preds[1] - 0.4) + std::abs(preds[2] - 2.5)) / 3.0;
    CHECK(energy_loss(p, state, labelled, contexts, s) == doctest::Approx(hand).epsilon(1e-12));
    CHECK(energy_loss(p, state, labelled, contexts, s) >= 0.0);
    CHECK_THROWS_AS(energy_loss(p, state, std::vector<PreferencePair>{}, contexts, s), DomainError);
}

TEST_CASE("total loss and posterior score") {
    CHECK(total_loss(0.6931, 2.0, {0.5}) == doctest::Approx(1.6931).epsilon(1e-12));
    CHECK(total_loss(0.6931, 2.0, {0.0}) == 0.6931);
    CHECK(total_loss(0.6931, 2.0, {0.5}, LossMode::energy_only) == 2.0);
    CHECK(total_loss(0.6931, 2.0, {0.5}, LossMode::dpo_only) == 0.6931);
    CHECK_THROWS_AS(total_loss(1.0, 1.0, {-0.1}), ConfigError);

    const auto S = testing::tiny_complex();
    const NoiseSchedule s = make_cosine_schedule(kT);
    const PredictorParams p = small_params(14);
    const Sequence X = seq({0, 1, 2}, kK), Y = seq({2, 2, 0}, kK);
    const EnergyFunction energy = [](const Sequence& y) { return 1.5 * y[0] - y[2]; };
    const double ll = model_log_likelihood(p, X, Y, S, s, 3, 8);
    CHECK(posterior_score(p, X, Y, S, s, 3, 8, energy, 0.0) == ll);
    CHECK(posterior_score(p, X, Y, S, s, 3, 8, energy, 0.7) == doctest::Approx(ll - 0.7 * energy(Y)).epsilon(1e-12));

    PredictorParams flat = p;
    flat.head.fill(0.0);
    flat.head_bias.fill(0.0);
    const Sequence low = seq({0, 1, 2}, kK), high = seq({2, 1, 0}, kK);
    CHECK(energy(low) < energy(high));
    for (double beta : {0.01, 1.0, 10.0})
        CHECK(posterior_score(flat, X, low, S, s, 3, 8, energy, beta) > posterior_score(flat, X, high, S, s, 3, 8, energy, beta));
    CHECK_THROWS_AS(posterior_score(p, X, Y, S, s, 3, 8, energy, -1.0), DomainError);
}

TEST_CASE("gradients match central finite differences") {
    const auto S = testing::tiny_complex();
    const NoiseSchedule s = make_cosine_schedule(kT);
    const PredictorParams p = small_params(2024);
    const PredictorParams ref = small_params(7);
    const Sequence X = seq({1, 2, 0}, kK);
    const Sequence yw = seq({0, 1, 2}, kK), yl = seq({2, 0, 0}, kK);
    ContextMap contexts{{"t0", DesignContext{S, S.unbound(), X}}};
    const std::vector<PreferencePair> pairs{{"t0", yw, yl, -2.0}, {"t0", seq({2, 1, 1}, kK), seq({0, 0, 1}, kK), 1.5}};
    const EnergyLossState state{0.8, 2, 31};
    const DpoConfig dpo{0.1, OmegaMode::constant, kT};

    // Pick a seed whose bridge state leaves positions to refine at t = 2.
    std::uint64_t seed = 0;
    while (refine_mask(forward_sample(X, yw, 2, s, seed), yw) == std::vector<int>(kL, 0)) ++seed;

    const LossEvaluator pretrain = [&](const PredictorParams& q, GradientBundle* g) {
        return pretrain_loss(q, X, yw, S, 2, s, seed, g);
    };
    const LossEvaluator dpo_loss = [&](const PredictorParams& q, GradientBundle* g) {
        return bridge_dpo_loss(q, ref, S, X, yw, yl, 3, s, dpo, 99, g);
    };
    const LossEvaluator energy = [&](const PredictorParams& q, GradientBundle* g) {
        return energy_loss(q, state, pairs, contexts, s, g);
    };
    const LossEvaluator total = [&](const PredictorParams& q, GradientBundle* g) {
        const double d = bridge_dpo_terms(q, ref, S, X, yw, yl, 3, s, dpo, 99, g).loss;
        const double e = energy_loss(q, state, pairs, contexts, s, g, nullptr, 0.5);
        return total_loss(d, e, {0.5});
    };
    for (const auto& [name, loss] : std::vector<std::pair<const char*, LossEvaluator>>{
             {"pretrain", pretrain}, {"dpo", dpo_loss}, {"energy", energy}, {"total", total}}) {
        const auto check = testing::finite_difference_check(loss, p, grad(loss, p));
        INFO(name << ": " << check.worst);
        CHECK(check.checked == static_cast<int>(p.parameter_count()));
        CHECK(check.max_rel <= 1e-4);
    }

    // kbt gradient of the energy term.
    double dkbt = 0.0;
    GradientBundle g = PredictorParams::zeros(p.dims);
    energy_loss(p, state, pairs, contexts, s, &g, &dkbt);
    const double h = 1e-4;
    EnergyLossState up = state, down = state;
    up.kbt += h;
    down.kbt -= h;
    const double numeric = (energy_loss(p, up, pairs, contexts, s) - energy_loss(p, down, pairs, contexts, s)) / (2 * h);
    CHECK(std::abs(dkbt - numeric) / std::max(std::abs(dkbt), 1e-12) <= 1e-4);
}

}
