#include "enerbridge/bridge.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "enerbridge/errors.hpp"
#include "enerbridge/rng.hpp"

namespace enerbridge {

Sequence::Sequence(std::vector<Token> tokens, int alphabet_size)
    : tokens_(std::move(tokens)), alphabet_size_(alphabet_size) {
    if (alphabet_size_ < 1) throw ShapeError("alphabet size must be positive");
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (tokens_[i] < 0 || tokens_[i] >= alphabet_size_) {
            throw DomainError("token " + std::to_string(tokens_[i]) + " at position " + std::to_string(i) +
                              " outside [0, " + std::to_string(alphabet_size_) + ")");
        }
    }
}

Matrix Sequence::one_hot() const {
    Matrix m(tokens_.size(), static_cast<std::size_t>(alphabet_size_));
    for (std::size_t i = 0; i < tokens_.size(); ++i) m(i, static_cast<std::size_t>(tokens_[i])) = 1.0;
    return m;
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
    if (betas.size() < 2) throw ConfigError("noise schedule needs at least 2 steps");
    if (betas.front() != 1.0 || betas.back() != 0.0) {
        throw ConfigError("noise schedule must start at beta=1 and end at beta=0");
    }
    for (std::size_t t = 0; t < betas.size(); ++t) {
        if (!(betas[t] >= 0.0 && betas[t] <= 1.0)) throw ConfigError("beta outside [0, 1]");
        if (t > 0 && betas[t] > betas[t - 1]) throw ConfigError("betas must be non-increasing");
    }
    NoiseSchedule s;
    s.T = static_cast<int>(betas.size());
    s.survival.assign(betas.size() + 1, 1.0);
    for (std::size_t t = 0; t < betas.size(); ++t) s.survival[t + 1] = s.survival[t] * betas[t];
    s.betas = std::move(betas);
    return s;
}

NoiseSchedule make_cosine_schedule(int T) {
    if (T < 2) throw ConfigError("cosine schedule needs T >= 2, got " + std::to_string(T));
    std::vector<double> betas(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
        const double c = std::cos(static_cast<double>(t) / (T - 1) * std::numbers::pi / 2.0);
        betas[static_cast<std::size_t>(t)] = c * c;
    }
    // cos(pi/2) is ~6e-17 in floating point; pin both ends exactly.
    betas.front() = 1.0;
    betas.back() = 0.0;
    return NoiseSchedule::from_betas(std::move(betas));
}

Matrix transition_matrix(Token target, double beta, int K) {
    if (K < 1) throw DomainError("alphabet size must be positive");
    if (!(beta >= 0.0 && beta <= 1.0)) throw DomainError("beta outside [0, 1]");
    if (target < 0 || target >= K) throw DomainError("target token out of range");
    Matrix q(static_cast<std::size_t>(K), static_cast<std::size_t>(K));
    for (int j = 0; j < K; ++j) {
        q(static_cast<std::size_t>(j), static_cast<std::size_t>(j)) += beta;
        q(static_cast<std::size_t>(target), static_cast<std::size_t>(j)) += 1.0 - beta;
    }
    return q;
}

namespace {

void check_step(int t, const NoiseSchedule& schedule) {
    if (t < 0 || t > schedule.T) {
        throw DomainError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(schedule.T) + "]");
    }
}

void check_same_shape(const Sequence& a, const Sequence& b) {
    if (a.length() != b.length() || a.alphabet_size() != b.alphabet_size()) {
        throw ShapeError("sequence shapes differ: L=" + std::to_string(a.length()) + "/" +
                         std::to_string(b.length()) + " K=" + std::to_string(a.alphabet_size()) + "/" +
                         std::to_string(b.alphabet_size()));
    }
}

}  // namespace

std::vector<double> forward_marginal(Token prior, Token target, int t, const NoiseSchedule& schedule, int K) {
    check_step(t, schedule);
    if (prior < 0 || prior >= K || target < 0 || target >= K) throw DomainError("token out of range");
    std::vector<double> p(static_cast<std::size_t>(K), 0.0);
    const double s = schedule.survival[static_cast<std::size_t>(t)];
    p[static_cast<std::size_t>(prior)] += s;
    p[static_cast<std::size_t>(target)] += 1.0 - s;
    return p;
}

Sequence forward_sample(const Sequence& X, const Sequence& Y, int t, const NoiseSchedule& schedule,
                        std::uint64_t seed) {
    check_same_shape(X, Y);
    check_step(t, schedule);
    const double s = schedule.survival[static_cast<std::size_t>(t)];
    Rng rng(seed, 0x666f7277);
    std::vector<Token> z(static_cast<std::size_t>(X.length()));
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.uniform() < s ? X[i] : Y[i];
    return Sequence(std::move(z), X.alphabet_size());
}

std::vector<int> refine_mask(const Sequence& z, const Sequence& Y) {
    check_same_shape(z, Y);
    std::vector<int> v(static_cast<std::size_t>(z.length()));
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = z[i] != Y[i] ? 1 : 0;
    return v;
}

double loss_weight_unclamped(int t, const NoiseSchedule& schedule) {
    if (t < 0 || t >= schedule.T) throw DomainError("loss weight timestep out of range");
    const auto u = static_cast<std::size_t>(t);
    return schedule.survival[u] - schedule.survival[u + 1];
}

double loss_weight(int t, const NoiseSchedule& schedule) {
    return std::max(loss_weight_unclamped(t, schedule), kMinLossWeight);
}

Sequence reverse_sample(const StepPredictor& predictor, const Sequence& prior, const NoiseSchedule& schedule,
                        std::uint64_t seed) {
    const auto L = static_cast<std::size_t>(prior.length());
    const auto K = static_cast<std::size_t>(prior.alphabet_size());
    Rng rng(seed, 0x72657673);
    Sequence z = prior;
    std::vector<double> q(K);
    for (int t = 0; t < schedule.T; ++t) {
        const Matrix yhat = predictor(z, t);
        if (yhat.rows() != L || yhat.cols() != K) throw ShapeError("predictor output shape mismatch");
        const double beta = schedule.betas[static_cast<std::size_t>(t)];
        std::vector<Token> next(L);
        for (std::size_t i = 0; i < L; ++i) {
            for (std::size_t k = 0; k < K; ++k) q[k] = (1.0 - beta) * yhat(i, k);
            q[static_cast<std::size_t>(z[i])] += beta;
            next[i] = rng.categorical(q);
        }
        z = Sequence(std::move(next), prior.alphabet_size());
    }
    return z;
}

double reverse_step_log_prob(const Matrix& yhat, const Sequence& from, const Sequence& to, double beta) {
    check_same_shape(from, to);
    double lp = 0.0;
    for (std::size_t i = 0; i < static_cast<std::size_t>(from.length()); ++i) {
        double p = (1.0 - beta) * yhat(i, static_cast<std::size_t>(to[i]));
        if (to[i] == from[i]) p += beta;
        lp += std::log(p);
    }
    return lp;
}

double reverse_path_log_prob(const StepPredictor& predictor, std::span<const Sequence> path,
                             const NoiseSchedule& schedule) {
    if (path.size() != static_cast<std::size_t>(schedule.T) + 1) throw ShapeError("path must hold T+1 states");
    double lp = 0.0;
    for (int t = 0; t < schedule.T; ++t) {
        const auto u = static_cast<std::size_t>(t);
        lp += reverse_step_log_prob(predictor(path[u], t), path[u], path[u + 1], schedule.betas[u]);
    }
    return lp;
}

}  // namespace enerbridge
