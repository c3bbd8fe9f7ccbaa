#include "enerbridge/cli.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "enerbridge/errors.hpp"
#include "enerbridge/io.hpp"
#include "enerbridge/metrics.hpp"
#include "enerbridge/preferences.hpp"
#include "enerbridge/reproduce.hpp"
#include "enerbridge/rng.hpp"
#include "enerbridge/trainer.hpp"

namespace enerbridge {

namespace {

using std::size_t;
namespace fs = std::filesystem;

struct Globals {
    std::optional<std::uint64_t> seed;
    std::string config;
    std::string out;
    bool quiet = false;

    std::uint64_t seed_or(std::uint64_t fallback) const { return seed.value_or(fallback); }
};

Json load_config(const Globals& g) { return g.config.empty() ? Json::object() : read_json(g.config); }

// A config document may be flat or carry the named section.
Json section(const Json& doc, const char* name) {
    if (doc.is_object() && doc.contains(name)) return doc.at(name);
    return doc;
}

template <class T>
void set_if(const std::optional<T>& v, T& target) {
    if (v) target = *v;
}

fs::path require_out(const Globals& g) {
    if (g.out.empty()) throw ConfigError("--out is required for this command");
    return g.out;
}

void emit(const Globals& g, const Json& j) {
    if (g.out.empty()) std::cout << j.dump(2) << "\n";
    else write_json(j, g.out);
}

void say(const Globals& g, const std::string& msg) {
    if (!g.quiet) std::cerr << msg << "\n";
}

std::vector<WorldEntry> entries_in_split(std::span<const WorldEntry> world, const std::string& split) {
    std::vector<WorldEntry> out;
    for (const auto& e : world) {
        if (split == "all" || e.split == split) out.push_back(e);
    }
    if (out.empty()) throw DataError("no structures in split '" + split + "'");
    return out;
}

std::pair<int, int> parse_range(const std::string& s) {
    const auto dots = s.find("..");
    try {
        if (dots == std::string::npos) {
            const int v = std::stoi(s);
            return {v, v};
        }
        return {std::stoi(s.substr(0, dots)), std::stoi(s.substr(dots + 2))};
    } catch (const std::exception&) {
        throw ConfigError("bad length range '" + s + "', expected a..b");
    }
}

void save_designs(const DesignSet& set, std::span<const WorldEntry> entries, const fs::path& path) {
    std::map<std::string, const WorldEntry*> by_id;
    for (const auto& e : entries) by_id[e.structure.id()] = &e;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    for (size_t k = 0; k < set.designs.size(); ++k) {
        const WorldEntry& e = *by_id.at(set.structure_ids[k]);
        Json j = {{"structure_id", set.structure_ids[k]},
                  {"tokens", set.designs[k].tokens()},
                  {"energy", potts_energy(e.structure, e.potts, set.designs[k])},
                  {"recovery", recovery_rate(set.designs[k], e.native)}};
        if (set.designs[k].alphabet_size() == static_cast<int>(kAlphabet.size())) {
            j["sequence"] = decode_sequence(set.designs[k]);
        }
        out << j.dump() << "\n";
    }
}

DesignSet load_designs(const std::string& name, const fs::path& path, std::span<const WorldEntry> world) {
    std::map<std::string, int> alphabet;
    for (const auto& e : world) alphabet[e.structure.id()] = e.native.alphabet_size();
    DesignSet set;
    set.model = name;
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::string line;
    size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const Json j = Json::parse(line);
            const auto id = j.at("structure_id").get<std::string>();
            const auto it = alphabet.find(id);
            if (it == alphabet.end()) throw DataError("unknown structure id '" + id + "'");
            set.structure_ids.push_back(id);
            set.designs.emplace_back(j.at("tokens").get<std::vector<Token>>(), it->second);
        } catch (const Json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(n) + ": " + e.what());
        } catch (const Error& e) {
            throw DataError(path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return set;
}

struct TrainFlags {
    std::optional<int> epochs;
    std::optional<int> batch_size;
    std::optional<double> lr;
    std::optional<int> warmup;
    std::optional<int> patience;
    std::optional<std::string> schedule;

    void add(CLI::App* app) {
        app->add_option("--epochs", epochs, "Training epochs");
        app->add_option("--batch-size", batch_size, "Batch size (residues when pretraining, pairs when fine-tuning)");
        app->add_option("--lr", lr, "Base learning rate");
        app->add_option("--warmup", warmup, "Warmup steps of the noam schedule");
        app->add_option("--patience", patience, "Early-stopping patience in epochs");
        app->add_option("--lr-schedule", schedule, "constant or noam")->check(CLI::IsMember({"constant", "noam"}));
    }

    void apply(TrainConfig& c) const {
        set_if(epochs, c.epochs);
        set_if(batch_size, c.batch_size);
        set_if(lr, c.base_lr);
        set_if(warmup, c.warmup);
        set_if(patience, c.patience);
        if (schedule) c.lr_schedule = *schedule == "noam" ? LrSchedule::noam : LrSchedule::constant;
    }
};

Json history_json(const std::vector<EpochRecord>& history) {
    Json h = Json::array();
    for (const auto& r : history) {
        h.push_back({{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}, {"kbt", r.kbt}, {"lr", r.lr}});
    }
    return h;
}

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"Desk-scale energy-aligned bridge models for inverse folding"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--seed", g.seed, "Master seed");
    app.add_option("--config", g.config, "JSON configuration file (flags take precedence)");
    app.add_option("--out", g.out, "Output file or directory");
    app.add_flag("--quiet", g.quiet, "Suppress progress output");

    // gen-world
    auto* gen = app.add_subcommand("gen-world", "Generate a synthetic world as JSONL");
    std::optional<int> structures, chains, alphabet, mutants, max_mutations, anneal;
    std::optional<double> mean_degree;
    std::optional<std::string> length_range;
    gen->add_option("--structures", structures, "Number of structures");
    gen->add_option("--L", length_range, "Length range a..b");
    gen->add_option("--chains", chains, "Chains per structure");
    gen->add_option("--alphabet", alphabet, "Alphabet size K");
    gen->add_option("--mutants", mutants, "Mutants per structure");
    gen->add_option("--max-mutations", max_mutations, "Maximum substitutions per mutant");
    gen->add_option("--anneal-steps", anneal, "Annealing steps for native sequences");
    gen->add_option("--mean-degree", mean_degree, "Mean contact degree");

    // train-prior
    auto* tprior = app.add_subcommand("train-prior", "Fit the structure prior head; writes an initial checkpoint");
    std::string world_path;
    std::optional<int> hidden, steps;
    TrainFlags prior_flags;
    tprior->add_option("--world", world_path, "World JSONL")->required();
    tprior->add_option("--d", hidden, "Predictor hidden width");
    tprior->add_option("--T", steps, "Number of bridge timesteps");
    prior_flags.add(tprior);

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "Bridge pretraining with early stopping");
    std::string init_path;
    TrainFlags pre_flags;
    pre->add_option("--world", world_path, "World JSONL")->required();
    pre->add_option("--init", init_path, "Checkpoint from train-prior")->required();
    pre_flags.add(pre);

    // make-prefs
    auto* prefs = app.add_subcommand("make-prefs", "Build preference pairs from scored mutants");
    std::string scores_path, split = "train";
    std::optional<double> top_frac, bottom_frac;
    std::optional<int> per_structure;
    prefs->add_option("--world", world_path, "World JSONL (mutants of the chosen split are paired)");
    prefs->add_option("--scores", scores_path, "External score file (CSV or JSONL) instead of the world mutants");
    prefs->add_option("--split", split, "Split to draw mutants from (train, val, test or all)");
    prefs->add_option("--top", top_frac, "Winner quantile");
    prefs->add_option("--bottom", bottom_frac, "Loser quantile");
    prefs->add_option("--pairs-per-structure", per_structure, "Pairs per structure");

    // finetune
    auto* fine = app.add_subcommand("finetune", "Preference fine-tuning from a reference checkpoint");
    std::string pairs_path, ref_path;
    std::optional<std::string> mode;
    std::optional<double> lambda_energy, beta_dpo;
    std::optional<std::string> omega;
    std::optional<int> lik_samples;
    TrainFlags fine_flags;
    fine->add_option("--world", world_path, "World JSONL")->required();
    fine->add_option("--pairs", pairs_path, "Pair JSONL")->required();
    fine->add_option("--ref", ref_path, "Reference checkpoint")->required();
    fine->add_option("--mode", mode, "dpo_energy (or full), dpo_only, energy_only")
        ->check(CLI::IsMember({"full", "dpo_energy", "dpo_only", "energy_only"}));
    fine->add_option("--lambda", lambda_energy, "Weight of the energy term");
    fine->add_option("--beta-dpo", beta_dpo, "DPO temperature");
    fine->add_option("--omega", omega, "constant or loss_weight")->check(CLI::IsMember({"constant", "loss_weight"}));
    fine->add_option("--samples", lik_samples, "Timestep draws per likelihood estimate");
    fine_flags.add(fine);

    // sample / eval-if / eval-ddg
    std::string ckpt_path;
    std::string eval_split = "test";
    int designs = 1;
    int samples = 4;
    int folds = 0;
    auto* sample = app.add_subcommand("sample", "Reverse-sample designs");
    sample->add_option("--world", world_path, "World JSONL")->required();
    sample->add_option("--ckpt", ckpt_path, "Model checkpoint")->required();
    sample->add_option("--split", eval_split, "Split to design for");
    sample->add_option("--designs", designs, "Designs per structure");

    auto* eval_if = app.add_subcommand("eval-if", "Perplexity and recovery");
    eval_if->add_option("--world", world_path, "World JSONL")->required();
    eval_if->add_option("--ckpt", ckpt_path, "Model checkpoint")->required();
    eval_if->add_option("--split", eval_split, "Split to evaluate");
    eval_if->add_option("--samples", samples, "Timestep draws per likelihood estimate");

    auto* eval_ddg = app.add_subcommand("eval-ddg", "ddG ranking metrics on mutants vs native");
    eval_ddg->add_option("--world", world_path, "World JSONL")->required();
    eval_ddg->add_option("--ckpt", ckpt_path, "Model checkpoint")->required();
    eval_ddg->add_option("--split", eval_split, "Split to evaluate");
    eval_ddg->add_option("--samples", samples, "Timestep draws per likelihood estimate");
    eval_ddg->add_option("--folds", folds, "Report pooled metrics over k structure folds");

    auto* eval_energy = app.add_subcommand("eval-energy", "Oracle energy table and ZScore of design sets");
    std::vector<std::string> design_specs;
    std::string csv_path;
    eval_energy->add_option("--world", world_path, "World JSONL")->required();
    eval_energy->add_option("--designs", design_specs, "name=path design JSONL, repeatable")->required();
    eval_energy->add_option("--csv", csv_path, "Also write the table as CSV");

    auto* repro = app.add_subcommand("reproduce", "Run the full desk-scale experiment");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        const Json doc = load_config(g);
        const auto started = std::chrono::steady_clock::now();

        if (*gen) {
            WorldConfig wc = world_config_from_json(section(doc, "world"), WorldConfig{});
            if (g.seed) wc.seed = *g.seed;
            set_if(structures, wc.structures);
            set_if(chains, wc.chains);
            set_if(alphabet, wc.alphabet);
            set_if(mutants, wc.mutants);
            set_if(max_mutations, wc.max_mutations);
            set_if(anneal, wc.anneal_steps);
            set_if(mean_degree, wc.mean_degree);
            if (length_range) std::tie(wc.min_length, wc.max_length) = parse_range(*length_range);
            const auto world = gen_world(wc);
            save_world(world, require_out(g));
            say(g, "wrote " + std::to_string(world.size()) + " structures to " + g.out);
        } else if (*tprior) {
            const ReproduceConfig defaults = default_reproduce_config(g.seed_or(7));
            TrainConfig tc = defaults.prior;
            apply_train_config(section(doc, "prior"), tc);
            if (g.seed) tc.seed = *g.seed;
            prior_flags.apply(tc);
            const auto world = load_world(world_path);
            std::vector<EpochRecord> history;
            Model m;
            m.prior = train_prior_head(world, tc, &history);
            const int T = steps.value_or(defaults.T);
            m.predictor = init_params(derive_seed(tc.seed, {0x696e6974}), hidden.value_or(defaults.hidden),
                                      world.front().native.alphabet_size(), T, world.front().structure.feature_width());
            save_checkpoint({m, make_cosine_schedule(T), train_config_to_json(tc), std::nullopt}, require_out(g));
            say(g, "prior head loss " + std::to_string(history.empty() ? 0.0 : history.back().train_loss));
        } else if (*pre) {
            TrainConfig tc = default_reproduce_config(g.seed_or(7)).pretrain;
            apply_train_config(section(doc, "pretrain"), tc);
            if (g.seed) tc.seed = *g.seed;
            pre_flags.apply(tc);
            const auto world = load_world(world_path);
            const Checkpoint init = load_checkpoint(init_path);
            const TrainResult r = pretrain(world, init.model, init.schedule, tc);
            Json echo = train_config_to_json(tc);
            echo["history"] = history_json(r.history);
            echo["best_epoch"] = r.best_epoch;
            save_checkpoint({r.model, init.schedule, echo, std::nullopt}, require_out(g));
            say(g, "best epoch " + std::to_string(r.best_epoch));
        } else if (*prefs) {
            PairingConfig pc = default_reproduce_config(g.seed_or(7)).pairing;
            const Json pj = section(doc, "pairing");
            if (pj.contains("top_frac")) pc.top_frac = pj["top_frac"].get<double>();
            if (pj.contains("bottom_frac")) pc.bottom_frac = pj["bottom_frac"].get<double>();
            if (pj.contains("pairs_per_structure")) pc.pairs_per_structure = pj["pairs_per_structure"].get<int>();
            if (g.seed) pc.seed = *g.seed;
            set_if(top_frac, pc.top_frac);
            set_if(bottom_frac, pc.bottom_frac);
            set_if(per_structure, pc.pairs_per_structure);
            std::vector<MutantRecord> records;
            if (!scores_path.empty()) {
                records = load_external_scores(scores_path);
            } else if (!world_path.empty()) {
                for (const auto& e : entries_in_split(load_world(world_path), split)) {
                    records.insert(records.end(), e.mutants.begin(), e.mutants.end());
                }
            } else {
                throw ConfigError("make-prefs needs --world or --scores");
            }
            const auto pairs = build_pairs(records, pc);
            save_pairs(pairs, require_out(g));
            say(g, "wrote " + std::to_string(pairs.size()) + " pairs");
        } else if (*fine) {
            TrainConfig tc = default_reproduce_config(g.seed_or(7)).finetune;
            apply_train_config(section(doc, "finetune"), tc);
            if (g.seed) tc.seed = *g.seed;
            fine_flags.apply(tc);
            if (mode) tc.loss_mode = loss_mode_from_string(*mode);
            set_if(lambda_energy, tc.total.lambda_energy);
            set_if(beta_dpo, tc.dpo.beta_dpo);
            set_if(lik_samples, tc.likelihood_samples);
            if (omega) tc.dpo.omega = *omega == "constant" ? OmegaMode::constant : OmegaMode::loss_weight;
            const auto world = load_world(world_path);
            const Checkpoint ref = load_checkpoint(ref_path);
            const auto pairs = load_pairs(pairs_path, world.front().native.alphabet_size(), world);
            const TrainResult r = dpo_finetune(world, pairs, ref.model, ref.schedule, tc);
            Json echo = train_config_to_json(tc);
            echo["history"] = history_json(r.history);
            save_checkpoint({r.model, ref.schedule, echo, std::nullopt}, require_out(g));
            say(g, "fine-tuned " + to_string(tc.loss_mode) + ", kbt " + std::to_string(r.model.kbt));
        } else if (*sample) {
            const auto world = load_world(world_path);
            const auto entries = entries_in_split(world, eval_split);
            const Checkpoint ck = load_checkpoint(ckpt_path);
            const DesignSet set = sample_designs(ck.model, fs::path(ckpt_path).stem().string(), entries, ck.schedule,
                                                 designs, g.seed_or(7));
            save_designs(set, entries, require_out(g));
            say(g, "wrote " + std::to_string(set.designs.size()) + " designs");
        } else if (*eval_if) {
            const auto world = load_world(world_path);
            const auto entries = entries_in_split(world, eval_split);
            const Checkpoint ck = load_checkpoint(ckpt_path);
            const ContextMap contexts = build_contexts(world, ck.model.prior);
            const MetricsReport ppl = perplexity(ck.model.predictor, entries, contexts, ck.schedule, samples, g.seed_or(7));
            const MetricsReport rec = recovery(ck.model, entries, ck.schedule, g.seed_or(7));
            Json out = report_to_json(ppl);
            for (const auto& [bucket, m] : rec.buckets) out["buckets"][bucket]["recovery"] = *m.recovery;
            out["scalars"]["median_recovery"] = *rec.scalar("median_recovery");
            emit(g, out);
        } else if (*eval_ddg) {
            const auto world = load_world(world_path);
            const auto entries = entries_in_split(world, eval_split);
            const Checkpoint ck = load_checkpoint(ckpt_path);
            const ContextMap contexts = build_contexts(world, ck.model.prior);
            const EnergyLossState state{ck.model.kbt, samples, g.seed_or(7)};
            Json out;
            if (folds > 1) {
                std::vector<std::string> ids;
                for (const auto& e : entries) ids.push_back(e.structure.id());
                std::vector<DdgFold> per_fold;
                for (const auto& fold_ids : kfold_by_structure(ids, folds, g.seed_or(7))) {
                    std::vector<WorldEntry> members;
                    for (const auto& e : entries) {
                        if (std::find(fold_ids.begin(), fold_ids.end(), e.structure.id()) != fold_ids.end()) members.push_back(e);
                    }
                    per_fold.push_back(predict_mutant_ddg(ck.model.predictor, members, contexts, ck.schedule, state));
                }
                out = report_to_json(fold_aggregate(per_fold));
            } else {
                const DdgFold f = predict_mutant_ddg(ck.model.predictor, entries, contexts, ck.schedule, state);
                out = report_to_json(ddg_metrics(f.preds, f.labels, f.groups));
            }
            emit(g, out);
        } else if (*eval_energy) {
            const auto world = load_world(world_path);
            std::vector<DesignSet> sets;
            for (const auto& spec : design_specs) {
                const auto eq = spec.find('=');
                if (eq == std::string::npos) throw ConfigError("--designs expects name=path, got '" + spec + "'");
                sets.push_back(load_designs(spec.substr(0, eq), spec.substr(eq + 1), world));
            }
            const auto rows = energy_table(sets, world);
            std::vector<std::vector<double>> table;
            for (const auto& row : rows) table.push_back({row.mean});
            Json out = Json::array();
            for (size_t m = 0; m < rows.size(); ++m) {
                Json row = {{"model", rows[m].model}, {"mean", rows[m].mean}, {"std", rows[m].std}, {"n", rows[m].energies.size()}};
                if (rows.size() >= 2) row["zscore"] = zscore(table, m);
                out.push_back(row);
            }
            if (!csv_path.empty()) {
                std::ofstream csv(csv_path);
                if (!csv) throw DataError("cannot write '" + csv_path + "'");
                csv << "model,mean,std,n\n";
                for (const auto& row : rows) {
                    csv << row.model << "," << Json(row.mean).dump() << "," << Json(row.std).dump() << ","
                        << row.energies.size() << "\n";
                }
            }
            emit(g, out);
        } else if (*repro) {
            ReproduceConfig rc = default_reproduce_config(g.seed_or(7));
            apply_reproduce_config(doc, rc);
            const fs::path out = g.out.empty() ? fs::path("report") : fs::path(g.out);
            const Json report = reproduce(rc, out, [&](const std::string& msg) {
                const double secs =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
                char stamp[32];
                std::snprintf(stamp, sizeof stamp, "[%7.1fs] ", secs);
                say(g, stamp + msg);
            });
            for (const auto& c : report["criteria"]) {
                say(g, "criterion " + c["id"].dump() + " (" + c["name"].get<std::string>() + "): " +
                           (c["pass"].get<bool>() ? "PASS" : "FAIL"));
            }
            say(g, std::string("report written to ") + (out / "report.json").string());
        }
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const Json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace enerbridge
