#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "enerbridge/world.hpp"

namespace enerbridge {

struct PairingConfig {
    double top_frac = 0.3;
    double bottom_frac = 0.3;
    int pairs_per_structure = 50;
    std::uint64_t seed = 0;
};

/// Per structure: winners from the best ceil(top_frac n) records, losers from
/// the worst ceil(bottom_frac n), paired at random. Lower score is better.
/// Pairs whose scores are not strictly ordered are dropped.
std::vector<PreferencePair> build_pairs(const std::vector<MutantRecord>& records, const PairingConfig& config);

struct StructureSplit {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
};

/// Shuffled partition; val and test get floor(frac n), train takes the rest.
StructureSplit split_by_structure(std::vector<std::string> ids, std::array<double, 3> fractions,
                                  std::uint64_t seed);

/// k near-equal folds, remainder to the earliest folds.
std::vector<std::vector<std::string>> kfold_by_structure(std::vector<std::string> ids, int k, std::uint64_t seed);

}  // namespace enerbridge
