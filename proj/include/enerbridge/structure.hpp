#pragma once

#include <string>
#include <utility>
#include <vector>

#include "enerbridge/tensor.hpp"

namespace enerbridge {

/// Feature channel layout shared by the world generator and the loaders.
namespace feature {
inline constexpr int kChain = 0;         // chain index
inline constexpr int kDegree = 1;        // contact degree / 4
inline constexpr int kRelativePos = 2;   // position within its chain in [0, 1]
inline constexpr int kFirstEnv = 3;      // environment channels follow
}  // namespace feature

/// Desk-scale backbone surrogate: contact graph, chain assignment and
/// per-position features.
class StructureContext {
  public:
    StructureContext() = default;

    /// Validates symmetry-by-construction, contiguous chain labels and finite
    /// features. Pairs may be given in any orientation; duplicates and
    /// self-contacts are rejected.
    StructureContext(std::string id, std::vector<int> chain_of, std::vector<std::pair<int, int>> contacts,
                     Matrix features);

    const std::string& id() const { return id_; }
    int length() const { return static_cast<int>(chain_of_.size()); }
    int num_chains() const { return num_chains_; }
    int chain_of(int i) const { return chain_of_[static_cast<std::size_t>(i)]; }
    const std::vector<int>& chains() const { return chain_of_; }
    const Matrix& features() const { return features_; }
    int feature_width() const { return static_cast<int>(features_.cols()); }

    /// Sorted (i, j) pairs with i < j.
    const std::vector<std::pair<int, int>>& contact_pairs() const { return pairs_; }
    /// Sorted neighbor list of position i.
    const std::vector<int>& neighbors(int i) const { return neighbors_[static_cast<std::size_t>(i)]; }
    bool contact(int i, int j) const;
    bool inter_chain(int i, int j) const { return chain_of(i) != chain_of(j); }

    /// Symmetric boolean matrix view (1.0 for contact).
    Matrix contact_matrix() const;

    /// Same structure with every inter-chain contact removed; features are kept.
    StructureContext unbound() const;

    friend bool operator==(const StructureContext& a, const StructureContext& b) {
        return a.id_ == b.id_ && a.chain_of_ == b.chain_of_ && a.pairs_ == b.pairs_ && a.features_ == b.features_;
    }

  private:
    std::string id_;
    std::vector<int> chain_of_;
    int num_chains_ = 0;
    std::vector<std::pair<int, int>> pairs_;
    std::vector<std::vector<int>> neighbors_;
    Matrix features_;
};

}  // namespace enerbridge
