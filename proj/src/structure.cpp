#include "enerbridge/structure.hpp"

#include <algorithm>
#include <cmath>

#include "enerbridge/errors.hpp"

namespace enerbridge {

StructureContext::StructureContext(std::string id, std::vector<int> chain_of,
                                   std::vector<std::pair<int, int>> contacts, Matrix features)
    : id_(std::move(id)), chain_of_(std::move(chain_of)), features_(std::move(features)) {
    const int L = length();
    if (L < 1) throw ShapeError("structure '" + id_ + "' is empty");
    if (chain_of_.front() != 0) throw DataError("structure '" + id_ + "': chain indices must start at 0");
    for (int i = 1; i < L; ++i) {
        const int step = chain_of_[static_cast<std::size_t>(i)] - chain_of_[static_cast<std::size_t>(i - 1)];
        if (step != 0 && step != 1) throw DataError("structure '" + id_ + "': chain indices must be contiguous");
    }
    num_chains_ = chain_of_.back() + 1;
    if (features_.rows() != static_cast<std::size_t>(L)) {
        throw ShapeError("structure '" + id_ + "': feature rows do not match length");
    }
    for (double v : features_.flat()) {
        if (!std::isfinite(v)) throw DataError("structure '" + id_ + "': non-finite feature");
    }

    for (auto& [i, j] : contacts) {
        if (i > j) std::swap(i, j);
        if (i < 0 || j >= L) throw DataError("structure '" + id_ + "': contact index out of range");
        if (i == j) throw DataError("structure '" + id_ + "': self-contact");
    }
    std::sort(contacts.begin(), contacts.end());
    if (std::adjacent_find(contacts.begin(), contacts.end()) != contacts.end()) {
        throw DataError("structure '" + id_ + "': duplicate contact");
    }
    pairs_ = std::move(contacts);
    neighbors_.assign(static_cast<std::size_t>(L), {});
    for (const auto& [i, j] : pairs_) {
        neighbors_[static_cast<std::size_t>(i)].push_back(j);
        neighbors_[static_cast<std::size_t>(j)].push_back(i);
    }
    for (auto& n : neighbors_) std::sort(n.begin(), n.end());
}

bool StructureContext::contact(int i, int j) const {
    const auto& n = neighbors_[static_cast<std::size_t>(i)];
    return std::binary_search(n.begin(), n.end(), j);
}

Matrix StructureContext::contact_matrix() const {
    const auto L = static_cast<std::size_t>(length());
    Matrix m(L, L);
    for (const auto& [i, j] : pairs_) {
        m(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = 1.0;
        m(static_cast<std::size_t>(j), static_cast<std::size_t>(i)) = 1.0;
    }
    return m;
}

StructureContext StructureContext::unbound() const {
    std::vector<std::pair<int, int>> intra;
    for (const auto& p : pairs_) {
        if (!inter_chain(p.first, p.second)) intra.push_back(p);
    }
    return StructureContext(id_, chain_of_, std::move(intra), features_);
}

}  // namespace enerbridge
