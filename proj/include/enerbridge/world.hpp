#pragma once

// Synthetic inverse-folding universe. Every structure carries an exact Potts
// energy; all Potts tables of one world are drawn around a shared "law"
// (one coupling table, one feature-to-field map) so that what a model learns
// on training structures transfers to held-out ones.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "enerbridge/bridge.hpp"
#include "enerbridge/structure.hpp"
#include "enerbridge/tensor.hpp"

namespace enerbridge {

/// E(Y) = sum_i h_i(y_i) + sum_{(i,j) in contacts, i<j} J_ij(y_i, y_j).
/// couplings[c] belongs to structure.contact_pairs()[c].
class PottsModel {
  public:
    PottsModel() = default;
    PottsModel(const StructureContext& structure, Matrix fields, std::vector<Matrix> couplings);

    int length() const { return static_cast<int>(fields_.rows()); }
    int alphabet_size() const { return static_cast<int>(fields_.cols()); }
    const Matrix& fields() const { return fields_; }
    const std::vector<Matrix>& couplings() const { return couplings_; }

    /// Energy change of setting position i to `token`, all else fixed.
    double flip_delta(std::span<const Token> y, int i, Token token) const;

    friend bool operator==(const PottsModel&, const PottsModel&) = default;

  private:
    Matrix fields_;
    std::vector<Matrix> couplings_;
    // Per position: (neighbor, coupling index) in neighbor order.
    std::vector<std::vector<std::pair<int, int>>> incident_;
};

struct MutantRecord {
    std::string structure_id;
    Sequence tokens;
    double score = 0.0;          // lower is better
    double ddg_vs_native = 0.0;  // oracle binding ddG (or energy change when single-chain)

    friend bool operator==(const MutantRecord&, const MutantRecord&) = default;
};

/// ddg_label = score(winner) - score(loser): the ddG of the winner relative to
/// the loser, negative whenever the pair is valid.
struct PreferencePair {
    std::string structure_id;
    Sequence winner;
    Sequence loser;
    double ddg_label = 0.0;

    friend bool operator==(const PreferencePair&, const PreferencePair&) = default;
};

StructureContext gen_structure(std::uint64_t seed, int L, int num_chains, double contact_density,
                               int env_channels = 8, std::string id = "s0");

double potts_energy(const StructureContext& structure, const PottsModel& potts, const Sequence& y);
/// Energy with every inter-chain coupling dropped.
double potts_energy_intra(const StructureContext& structure, const PottsModel& potts, const Sequence& y);
/// Binding free energy surrogate: E_full - E_intra.
double binding_energy(const StructureContext& structure, const PottsModel& potts, const Sequence& y);
double binding_ddg_true(const StructureContext& structure, const PottsModel& potts, const Sequence& mutant,
                        const Sequence& wild_type);

/// Simulated annealing over single-token flips, temperature 2.0 -> 0.01.
Sequence native_sequence(const StructureContext& structure, const PottsModel& potts, int anneal_steps,
                         std::uint64_t seed);

/// Random substitutions (1..max_mutations) of the native, deduplicated,
/// native excluded. Positions are drawn from the interface when the structure
/// has one.
std::vector<MutantRecord> make_mutant_library(const StructureContext& structure, const PottsModel& potts,
                                              const Sequence& native, int n_mutants, int max_mutations,
                                              std::uint64_t seed);

/// Shared generative law of a world.
struct WorldLaw {
    Matrix coupling;   // K x K symmetric, entries in [-1, 1]
    Matrix field_map;  // env_channels x K
};

WorldLaw make_world_law(std::uint64_t seed, int K, int env_channels);
PottsModel make_potts(const StructureContext& structure, const WorldLaw& law, std::uint64_t seed);

struct WorldConfig {
    std::uint64_t seed = 7;
    int structures = 60;
    int min_length = 20;
    int max_length = 60;
    int chains = 2;
    int alphabet = 20;
    int env_channels = 8;
    double mean_degree = 5.0;  // sets the contact density per structure
    int mutants = 60;
    int max_mutations = 3;
    int anneal_steps = 20000;
    double train_fraction = 0.5;
    double val_fraction = 4.0 / 60.0;
    double test_fraction = 26.0 / 60.0;
};

struct WorldEntry {
    StructureContext structure;
    PottsModel potts;
    Sequence native;
    std::vector<MutantRecord> mutants;
    std::string split;  // "train", "val" or "test"

    friend bool operator==(const WorldEntry&, const WorldEntry&) = default;
};

std::vector<WorldEntry> gen_world(const WorldConfig& config);

}  // namespace enerbridge
