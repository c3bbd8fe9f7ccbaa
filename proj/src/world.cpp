#include "enerbridge/world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "enerbridge/errors.hpp"
#include "enerbridge/preferences.hpp"
#include "enerbridge/rng.hpp"

namespace enerbridge {

PottsModel::PottsModel(const StructureContext& structure, Matrix fields, std::vector<Matrix> couplings)
    : fields_(std::move(fields)), couplings_(std::move(couplings)) {
    const auto L = static_cast<std::size_t>(structure.length());
    if (fields_.rows() != L) throw ShapeError("Potts field table length does not match structure");
    const std::size_t K = fields_.cols();
    if (couplings_.size() != structure.contact_pairs().size()) {
        throw ShapeError("Potts couplings must be defined exactly on the contact pairs");
    }
    for (const auto& J : couplings_) {
        if (J.rows() != K || J.cols() != K) throw ShapeError("Potts coupling table must be K x K");
        for (double v : J.flat()) {
            if (!std::isfinite(v)) throw DataError("non-finite Potts coupling");
        }
    }
    for (double v : fields_.flat()) {
        if (!std::isfinite(v)) throw DataError("non-finite Potts field");
    }
    incident_.assign(L, {});
    const auto& pairs = structure.contact_pairs();
    for (std::size_t c = 0; c < pairs.size(); ++c) {
        incident_[static_cast<std::size_t>(pairs[c].first)].emplace_back(pairs[c].second, static_cast<int>(c));
        incident_[static_cast<std::size_t>(pairs[c].second)].emplace_back(pairs[c].first, static_cast<int>(c));
    }
}

double PottsModel::flip_delta(std::span<const Token> y, int i, Token token) const {
    const auto ui = static_cast<std::size_t>(i);
    const Token old = y[ui];
    if (old == token) return 0.0;
    double d = fields_(ui, static_cast<std::size_t>(token)) - fields_(ui, static_cast<std::size_t>(old));
    for (const auto& [j, c] : incident_[ui]) {
        const Matrix& J = couplings_[static_cast<std::size_t>(c)];
        const auto yj = static_cast<std::size_t>(y[static_cast<std::size_t>(j)]);
        if (i < j) {
            d += J(static_cast<std::size_t>(token), yj) - J(static_cast<std::size_t>(old), yj);
        } else {
            d += J(yj, static_cast<std::size_t>(token)) - J(yj, static_cast<std::size_t>(old));
        }
    }
    return d;
}

StructureContext gen_structure(std::uint64_t seed, int L, int num_chains, double contact_density, int env_channels,
                               std::string id) {
    if (L < 2) throw ConfigError("structure length must be at least 2");
    if (num_chains < 1 || num_chains > L) throw ConfigError("chain count must lie in [1, L]");
    if (!(contact_density > 0.0 && contact_density <= 1.0)) throw ConfigError("contact density must lie in (0, 1]");
    if (env_channels < 0) throw ConfigError("environment channel count must be non-negative");

    Rng rng(seed, 0x73747275);
    std::vector<int> chain_of(static_cast<std::size_t>(L));
    std::vector<int> chain_start;
    {
        const int base = L / num_chains;
        const int extra = L % num_chains;
        int pos = 0;
        for (int c = 0; c < num_chains; ++c) {
            chain_start.push_back(pos);
            const int size = base + (c < extra ? 1 : 0);
            for (int k = 0; k < size; ++k) chain_of[static_cast<std::size_t>(pos++)] = c;
        }
        chain_start.push_back(L);
    }

    std::set<std::pair<int, int>> contacts;
    for (int i = 0; i + 1 < L; ++i) {
        if (chain_of[static_cast<std::size_t>(i)] == chain_of[static_cast<std::size_t>(i + 1)]) contacts.emplace(i, i + 1);
    }
    const double all_pairs = 0.5 * L * (L - 1);
    const auto target = static_cast<std::size_t>(std::ceil(contact_density * all_pairs - 1e-9));
    if (target > contacts.size()) {
        std::vector<std::pair<int, int>> candidates;
        for (int i = 0; i < L; ++i) {
            for (int j = i + 1; j < L; ++j) {
                if (!contacts.count({i, j})) candidates.emplace_back(i, j);
            }
        }
        const std::size_t need = std::min(target - contacts.size(), candidates.size());
        for (std::size_t k = 0; k < need; ++k) {
            const std::size_t j = k + static_cast<std::size_t>(rng.below(candidates.size() - k));
            std::swap(candidates[k], candidates[j]);
            contacts.insert(candidates[k]);
        }
    }

    std::vector<int> degree(static_cast<std::size_t>(L), 0);
    for (const auto& [i, j] : contacts) {
        ++degree[static_cast<std::size_t>(i)];
        ++degree[static_cast<std::size_t>(j)];
    }
    Matrix features(static_cast<std::size_t>(L), static_cast<std::size_t>(feature::kFirstEnv + env_channels));
    for (int i = 0; i < L; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        const int c = chain_of[ui];
        const int span = chain_start[static_cast<std::size_t>(c) + 1] - chain_start[static_cast<std::size_t>(c)];
        features(ui, feature::kChain) = c;
        features(ui, feature::kDegree) = degree[ui] / 4.0;
        features(ui, feature::kRelativePos) =
            span > 1 ? static_cast<double>(i - chain_start[static_cast<std::size_t>(c)]) / (span - 1) : 0.0;
        for (int e = 0; e < env_channels; ++e) {
            features(ui, static_cast<std::size_t>(feature::kFirstEnv + e)) = rng.uniform(-1.0, 1.0);
        }
    }
    return StructureContext(std::move(id), std::move(chain_of), {contacts.begin(), contacts.end()},
                            std::move(features));
}

namespace {

void check_sequence(const StructureContext& s, const PottsModel& potts, const Sequence& y) {
    if (y.length() != s.length() || potts.length() != s.length() || y.alphabet_size() != potts.alphabet_size()) {
        throw ShapeError("sequence, structure and Potts model shapes disagree");
    }
}

double energy_impl(const StructureContext& s, const PottsModel& potts, const Sequence& y, bool include_inter) {
    check_sequence(s, potts, y);
    double e = 0.0;
    for (int i = 0; i < s.length(); ++i) {
        e += potts.fields()(static_cast<std::size_t>(i), static_cast<std::size_t>(y[static_cast<std::size_t>(i)]));
    }
    const auto& pairs = s.contact_pairs();
    for (std::size_t c = 0; c < pairs.size(); ++c) {
        const auto [i, j] = pairs[c];
        if (!include_inter && s.inter_chain(i, j)) continue;
        e += potts.couplings()[c](static_cast<std::size_t>(y[static_cast<std::size_t>(i)]),
                                  static_cast<std::size_t>(y[static_cast<std::size_t>(j)]));
    }
    return e;
}

}  // namespace

double potts_energy(const StructureContext& structure, const PottsModel& potts, const Sequence& y) {
    return energy_impl(structure, potts, y, true);
}

double potts_energy_intra(const StructureContext& structure, const PottsModel& potts, const Sequence& y) {
    return energy_impl(structure, potts, y, false);
}

double binding_energy(const StructureContext& structure, const PottsModel& potts, const Sequence& y) {
    return potts_energy(structure, potts, y) - potts_energy_intra(structure, potts, y);
}

double binding_ddg_true(const StructureContext& structure, const PottsModel& potts, const Sequence& mutant,
                        const Sequence& wild_type) {
    if (structure.num_chains() < 2) throw DomainError("binding ddG needs at least two chains");
    return binding_energy(structure, potts, mutant) - binding_energy(structure, potts, wild_type);
}

Sequence native_sequence(const StructureContext& structure, const PottsModel& potts, int anneal_steps,
                         std::uint64_t seed) {
    if (anneal_steps < 1) throw ConfigError("anneal_steps must be at least 1");
    const int L = structure.length();
    const int K = potts.alphabet_size();
    Rng rng(seed, 0x616e6e6c);
    std::vector<Token> init(static_cast<std::size_t>(L));
    for (auto& tok : init) tok = static_cast<Token>(rng.below(static_cast<std::uint64_t>(K)));
    Sequence y(std::move(init), K);
    check_sequence(structure, potts, y);
    if (K < 2) return y;

    std::vector<Token> current = y.tokens();
    double energy = potts_energy(structure, potts, y);
    std::vector<Token> best = current;
    double best_energy = energy;
    constexpr double kStart = 2.0;
    constexpr double kEnd = 0.01;
    for (int step = 0; step < anneal_steps; ++step) {
        const double frac = anneal_steps > 1 ? static_cast<double>(step) / (anneal_steps - 1) : 1.0;
        const double temperature = kStart * std::pow(kEnd / kStart, frac);
        const int i = static_cast<int>(rng.below(static_cast<std::uint64_t>(L)));
        auto proposal = static_cast<Token>(rng.below(static_cast<std::uint64_t>(K - 1)));
        if (proposal >= current[static_cast<std::size_t>(i)]) ++proposal;
        const double delta = potts.flip_delta(current, i, proposal);
        const double u = rng.uniform();
        if (delta <= 0.0 || u < std::exp(-delta / temperature)) {
            current[static_cast<std::size_t>(i)] = proposal;
            energy += delta;
            if (energy < best_energy - 1e-12) {
                best_energy = energy;
                best = current;
            }
        }
    }
    return Sequence(std::move(best), K);
}

std::vector<MutantRecord> make_mutant_library(const StructureContext& structure, const PottsModel& potts,
                                              const Sequence& native, int n_mutants, int max_mutations,
                                              std::uint64_t seed) {
    if (n_mutants < 2) throw ConfigError("mutant library needs n_mutants >= 2");
    if (max_mutations < 1) throw ConfigError("max_mutations must be at least 1");
    const int K = native.alphabet_size();
    if (K < 2) throw ConfigError("alphabet too small to mutate");
    check_sequence(structure, potts, native);
    const bool multi_chain = structure.num_chains() >= 2;

    std::vector<int> sites;
    if (multi_chain) {
        for (int i = 0; i < structure.length(); ++i) {
            for (int j : structure.neighbors(i)) {
                if (structure.inter_chain(i, j)) {
                    sites.push_back(i);
                    break;
                }
            }
        }
    }
    if (sites.empty()) {
        for (int i = 0; i < structure.length(); ++i) sites.push_back(i);
    }
    const int max_sites = std::min<int>(max_mutations, static_cast<int>(sites.size()));

    Rng rng(seed, 0x6d757461);
    std::set<std::vector<Token>> seen{native.tokens()};
    std::vector<MutantRecord> out;
    const double native_energy = potts_energy(structure, potts, native);
    const int max_attempts = 50 * n_mutants;
    for (int attempt = 0; attempt < max_attempts && static_cast<int>(out.size()) < n_mutants; ++attempt) {
        const int count = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_sites)));
        std::vector<int> pool = sites;
        std::vector<Token> tokens = native.tokens();
        for (int m = 0; m < count; ++m) {
            const std::size_t pick =
                static_cast<std::size_t>(m) + static_cast<std::size_t>(rng.below(pool.size() - static_cast<std::size_t>(m)));
            std::swap(pool[static_cast<std::size_t>(m)], pool[pick]);
            const auto pos = static_cast<std::size_t>(pool[static_cast<std::size_t>(m)]);
            auto tok = static_cast<Token>(rng.below(static_cast<std::uint64_t>(K - 1)));
            if (tok >= tokens[pos]) ++tok;
            tokens[pos] = tok;
        }
        if (!seen.insert(tokens).second) continue;
        Sequence mutant(std::move(tokens), K);
        const double ddg = multi_chain ? binding_ddg_true(structure, potts, mutant, native)
                                       : potts_energy(structure, potts, mutant) - native_energy;
        out.push_back({structure.id(), std::move(mutant), ddg, ddg});
    }
    return out;
}

WorldLaw make_world_law(std::uint64_t seed, int K, int env_channels) {
    if (K < 1 || env_channels < 0) throw ConfigError("invalid world law dimensions");
    Rng rng(seed, 0x6c617721);
    WorldLaw law{Matrix(static_cast<std::size_t>(K), static_cast<std::size_t>(K)),
                 Matrix(static_cast<std::size_t>(env_channels), static_cast<std::size_t>(K))};
    for (std::size_t a = 0; a < law.coupling.rows(); ++a) {
        for (std::size_t b = a; b < law.coupling.cols(); ++b) {
            law.coupling(a, b) = law.coupling(b, a) = rng.uniform(-1.0, 1.0);
        }
    }
    for (double& v : law.field_map.flat()) v = rng.uniform(-1.0, 1.0);
    return law;
}

PottsModel make_potts(const StructureContext& structure, const WorldLaw& law, std::uint64_t seed) {
    const auto L = static_cast<std::size_t>(structure.length());
    const std::size_t K = law.coupling.rows();
    const auto env = static_cast<std::size_t>(structure.feature_width() - feature::kFirstEnv);
    if (env != law.field_map.rows()) throw ShapeError("structure environment channels do not match the world law");
    Rng rng(seed, 0x706f7474);
    Matrix fields(L, K);
    for (std::size_t i = 0; i < L; ++i) {
        for (std::size_t k = 0; k < K; ++k) {
            double x = 0.0;
            for (std::size_t e = 0; e < env; ++e) {
                x += structure.features()(i, static_cast<std::size_t>(feature::kFirstEnv) + e) * law.field_map(e, k);
            }
            fields(i, k) = 0.5 * std::tanh(x);  // stays inside [-0.5, 0.5]
        }
    }
    std::vector<Matrix> couplings;
    couplings.reserve(structure.contact_pairs().size());
    for (std::size_t c = 0; c < structure.contact_pairs().size(); ++c) {
        Matrix J(K, K);
        for (std::size_t a = 0; a < K; ++a) {
            for (std::size_t b = 0; b < K; ++b) J(a, b) = 0.8 * law.coupling(a, b) + 0.2 * rng.uniform(-1.0, 1.0);
        }
        couplings.push_back(std::move(J));
    }
    return PottsModel(structure, std::move(fields), std::move(couplings));
}

std::vector<WorldEntry> gen_world(const WorldConfig& config) {
    if (config.structures < 1) throw ConfigError("world needs at least one structure");
    if (config.min_length < 2 || config.max_length < config.min_length) throw ConfigError("invalid length range");
    if (config.mean_degree <= 0.0) throw ConfigError("mean_degree must be positive");
    const WorldLaw law = make_world_law(config.seed, config.alphabet, config.env_channels);
    Rng rng(config.seed, 0x776f726c);

    std::vector<WorldEntry> world;
    std::vector<std::string> ids;
    for (int s = 0; s < config.structures; ++s) {
        char id[16];
        std::snprintf(id, sizeof id, "s%03d", s);
        const auto tag = static_cast<std::uint64_t>(s);
        const int L = config.min_length +
                      static_cast<int>(rng.below(static_cast<std::uint64_t>(config.max_length - config.min_length + 1)));
        const double density = std::min(1.0, config.mean_degree / (L - 1));
        WorldEntry e;
        e.structure = gen_structure(derive_seed(config.seed, {1, tag}), L, std::min(config.chains, L), density,
                                    config.env_channels, id);
        e.potts = make_potts(e.structure, law, derive_seed(config.seed, {2, tag}));
        e.native = native_sequence(e.structure, e.potts, config.anneal_steps, derive_seed(config.seed, {3, tag}));
        if (config.mutants >= 2 && config.alphabet >= 2) {
            e.mutants = make_mutant_library(e.structure, e.potts, e.native, config.mutants, config.max_mutations,
                                            derive_seed(config.seed, {4, tag}));
        }
        ids.emplace_back(id);
        world.push_back(std::move(e));
    }

    const double fsum = config.train_fraction + config.val_fraction + config.test_fraction;
    const auto split = split_by_structure(
        ids, {config.train_fraction / fsum, config.val_fraction / fsum, config.test_fraction / fsum},
        derive_seed(config.seed, {5}));
    for (auto& e : world) {
        const auto& id = e.structure.id();
        if (std::binary_search(split.val.begin(), split.val.end(), id)) e.split = "val";
        else if (std::binary_search(split.test.begin(), split.test.end(), id)) e.split = "test";
        else e.split = "train";
    }
    return world;
}

}  // namespace enerbridge
