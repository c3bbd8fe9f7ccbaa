#pragma once

// Categorical Markov bridge kernels. A bridge starts at a prior sequence X
// and is pinned to a target Y at step T; every position evolves
// independently under Q_t(Y) = beta_t I + (1 - beta_t) Y 1^T.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "enerbridge/tensor.hpp"

namespace enerbridge {

using Token = int;

/// Token sequence over an alphabet of size K (the one-hot view is derived).
class Sequence {
  public:
    Sequence() = default;
    Sequence(std::vector<Token> tokens, int alphabet_size);

    int length() const { return static_cast<int>(tokens_.size()); }
    int alphabet_size() const { return alphabet_size_; }
    Token operator[](std::size_t i) const { return tokens_[i]; }
    const std::vector<Token>& tokens() const { return tokens_; }

    Matrix one_hot() const;

    friend bool operator==(const Sequence&, const Sequence&) = default;
    friend auto operator<=>(const Sequence& a, const Sequence& b) { return a.tokens_ <=> b.tokens_; }

  private:
    std::vector<Token> tokens_;
    int alphabet_size_ = 0;
};

/// betas[t] is the probability a token stays put at step t; survival[t] is
/// the probability it has not jumped to the target before step t.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;
    std::vector<double> survival;

    /// Validates endpoint pinning and monotonicity, then fills survival.
    static NoiseSchedule from_betas(std::vector<double> betas);
};

NoiseSchedule make_cosine_schedule(int T);

/// Column-stochastic K x K matrix; column j is the next-token distribution
/// given current token j.
Matrix transition_matrix(Token target, double beta, int K);

/// Closed-form p(z_t | X, Y) for one position.
std::vector<double> forward_marginal(Token prior, Token target, int t, const NoiseSchedule& schedule, int K);

/// Draws z_t ~ p(z_t | X, Y). One uniform per position, so two calls with the
/// same seed and prior share their jump pattern.
Sequence forward_sample(const Sequence& X, const Sequence& Y, int t, const NoiseSchedule& schedule,
                        std::uint64_t seed);

/// 1 where z_t still differs from the target.
std::vector<int> refine_mask(const Sequence& z, const Sequence& Y);

/// lambda_t = s_t - s_{t+1}, clamped below at kMinLossWeight.
double loss_weight(int t, const NoiseSchedule& schedule);
double loss_weight_unclamped(int t, const NoiseSchedule& schedule);
inline constexpr double kMinLossWeight = 1e-8;

/// Maps (z_t, t) to an L x K row-stochastic matrix of target probabilities.
using StepPredictor = std::function<Matrix(const Sequence& z, int t)>;

/// Ancestral sampling z_0 = prior, z_{t+1} ~ Cat(beta_t z_t + (1 - beta_t) yhat).
Sequence reverse_sample(const StepPredictor& predictor, const Sequence& prior, const NoiseSchedule& schedule,
                        std::uint64_t seed);

/// Log-probability of step t -> t+1 of a reverse trajectory under the
/// predictor-driven kernel, and its sum over a whole path.
double reverse_step_log_prob(const Matrix& yhat, const Sequence& from, const Sequence& to, double beta);
double reverse_path_log_prob(const StepPredictor& predictor, std::span<const Sequence> path,
                             const NoiseSchedule& schedule);

}  // namespace enerbridge
