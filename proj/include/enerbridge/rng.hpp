#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>

namespace enerbridge {

/// SplitMix64 finalizer. Used both as the counter-to-output bijection of
/// Rng and for deriving child keys.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Folds a list of tags into a seed. derive_seed(s, {a, b}) is a pure
/// function, so any stochastic call site can name its own stream.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t k = mix64(seed ^ 0x5851f42d4c957f2dULL);
    for (std::uint64_t tag : tags) k = mix64(k ^ mix64(tag + 0x2545f4914f6cdd1dULL));
    return k;
}

/// Counter-based generator: output n is mix64(key + n * golden). The whole
/// state is (key, counter), so streams are cheap to split and replay.
class Rng {
  public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) : key_(derive_seed(seed, {stream})) {}

    std::uint64_t next() {
        return mix64(key_ + 0x9e3779b97f4a7c15ULL * (counter_++));
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Rejection keeps it unbiased.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
        std::uint64_t x = next();
        while (x >= limit) x = next();
        return x % n;
    }

    /// Index drawn from an unnormalized non-negative weight vector. Zero-weight
    /// entries are never returned.
    int categorical(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        const double u = uniform() * total;
        double acc = 0.0;
        int last_positive = -1;
        for (std::size_t k = 0; k < weights.size(); ++k) {
            if (weights[k] <= 0.0) continue;
            acc += weights[k];
            last_positive = static_cast<int>(k);
            if (u < acc) return last_positive;
        }
        return last_positive;  // rounding at the upper edge
    }

    /// Independent child stream; does not advance this generator.
    Rng split(std::uint64_t stream) const {
        Rng child(0);
        child.key_ = derive_seed(key_, {stream, counter_});
        return child;
    }

  private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace enerbridge
