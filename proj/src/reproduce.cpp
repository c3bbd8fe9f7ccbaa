#include "enerbridge/reproduce.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include "enerbridge/errors.hpp"
#include "enerbridge/metrics.hpp"
#include "enerbridge/rng.hpp"

namespace enerbridge {

namespace {

using std::size_t;

std::uint64_t id_tag(const std::string& s) { return fnv1a(s); }

std::vector<WorldEntry> entries_of(std::span<const WorldEntry> world, const std::string& split) {
    std::vector<WorldEntry> out;
    for (const auto& e : world) {
        if (e.split == split) out.push_back(e);
    }
    return out;
}

// Mean per structure, in the order structures first appear in the set.
std::vector<double> per_structure_means(const DesignSet& set, std::span<const double> values) {
    std::vector<std::string> order;
    std::map<std::string, std::pair<double, int>> acc;
    for (size_t k = 0; k < set.structure_ids.size(); ++k) {
        auto [it, inserted] = acc.try_emplace(set.structure_ids[k], 0.0, 0);
        if (inserted) order.push_back(set.structure_ids[k]);
        it->second.first += values[k];
        it->second.second += 1;
    }
    std::vector<double> out;
    for (const auto& id : order) out.push_back(acc[id].first / acc[id].second);
    return out;
}

std::vector<double> design_recoveries(const DesignSet& set, std::span<const WorldEntry> entries) {
    std::map<std::string, const WorldEntry*> by_id;
    for (const auto& e : entries) by_id[e.structure.id()] = &e;
    std::vector<double> out;
    for (size_t k = 0; k < set.designs.size(); ++k) {
        out.push_back(recovery_rate(set.designs[k], by_id.at(set.structure_ids[k])->native));
    }
    return out;
}

double median_recovery(const DesignSet& set, std::span<const WorldEntry> entries, Json* buckets) {
    const auto per = per_structure_means(set, design_recoveries(set, entries));
    std::vector<int> lengths;
    for (const auto& e : entries) lengths.push_back(e.structure.length());
    const auto medians = bucket_medians(lengths, per);
    if (buckets) {
        for (const auto& [k, v] : medians) (*buckets)[k] = v;
    }
    return medians.at("full");
}

Json criterion(int id, const std::string& name, bool pass, Json detail) {
    return {{"id", id}, {"name", name}, {"pass", pass}, {"detail", std::move(detail)}};
}

Json smoke_test(const ReproduceConfig& config, const NoiseSchedule& schedule, const ProgressFn& progress) {
    const SmokeConfig& sc = config.smoke;
    const std::uint64_t seed = derive_seed(config.seed, {0x736d6f6b65});
    WorldEntry e;
    const int L = sc.length;
    e.structure = gen_structure(derive_seed(seed, {1}), L, sc.chains, std::min(1.0, config.world.mean_degree / (L - 1)),
                                config.world.env_channels, "smoke");
    const WorldLaw law = make_world_law(derive_seed(seed, {2}), config.world.alphabet, config.world.env_channels);
    e.potts = make_potts(e.structure, law, derive_seed(seed, {3}));
    e.native = native_sequence(e.structure, e.potts, config.world.anneal_steps, derive_seed(seed, {4}));
    e.split = "train";
    const std::vector<WorldEntry> world{e};

    // The prior head stays at its seeded initialization: fitted to this one
    // structure it would reproduce the native, leaving nothing to refine.
    Model init;
    init.prior = init_prior_head(derive_seed(seed, {7}), e.structure.feature_width(), config.world.alphabet);
    init.predictor = init_params(derive_seed(seed, {5}), config.hidden, config.world.alphabet, schedule.T,
                                 e.structure.feature_width());
    const TrainResult r = pretrain(world, init, schedule, sc.train);
    const DesignSet designs = sample_designs(r.model, "smoke", world, schedule, 1, derive_seed(seed, {6}));
    const double rec = recovery_rate(designs.designs.front(), e.native);
    if (progress) progress("smoke test recovery " + std::to_string(rec));
    return {{"recovery", rec}, {"epochs", r.history.size()}, {"best_epoch", r.best_epoch}};
}

}  // namespace

ReproduceConfig default_reproduce_config(std::uint64_t seed) {
    ReproduceConfig c;
    c.seed = seed;
    c.world.seed = seed;

    c.prior.epochs = 300;
    c.prior.base_lr = 0.05;
    c.prior.lr_schedule = LrSchedule::constant;
    c.prior.seed = derive_seed(seed, {0x70});

    c.pretrain.epochs = 150;
    c.pretrain.batch_size = 200;
    c.pretrain.base_lr = 3e-3;
    c.pretrain.lr_schedule = LrSchedule::noam;
    c.pretrain.warmup = 50;
    c.pretrain.patience = 20;
    c.pretrain.seed = derive_seed(seed, {0x71});

    c.pairing.seed = derive_seed(seed, {0x72});

    c.finetune.epochs = 10;
    c.finetune.batch_size = 50;
    c.finetune.base_lr = 5e-4;
    c.finetune.lr_schedule = LrSchedule::constant;
    c.finetune.loss_mode = LossMode::dpo_energy;
    c.finetune.seed = derive_seed(seed, {0x73});

    c.smoke.train = c.pretrain;
    c.smoke.train.epochs = 600;
    c.smoke.train.batch_size = 1;
    c.smoke.train.lr_schedule = LrSchedule::constant;
    c.smoke.train.base_lr = 1e-2;
    c.smoke.train.patience = 600;
    c.smoke.train.seed = derive_seed(seed, {0x74});
    return c;
}

Json world_config_to_json(const WorldConfig& c) {
    return {{"seed", c.seed},
            {"structures", c.structures},
            {"min_length", c.min_length},
            {"max_length", c.max_length},
            {"chains", c.chains},
            {"alphabet", c.alphabet},
            {"env_channels", c.env_channels},
            {"mean_degree", c.mean_degree},
            {"mutants", c.mutants},
            {"max_mutations", c.max_mutations},
            {"anneal_steps", c.anneal_steps},
            {"train_fraction", c.train_fraction},
            {"val_fraction", c.val_fraction},
            {"test_fraction", c.test_fraction}};
}

WorldConfig world_config_from_json(const Json& j, WorldConfig c) {
    if (!j.is_object()) throw ConfigError("world config must be a JSON object");
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "structures") c.structures = v.get<int>();
            else if (key == "min_length") c.min_length = v.get<int>();
            else if (key == "max_length") c.max_length = v.get<int>();
            else if (key == "chains") c.chains = v.get<int>();
            else if (key == "alphabet") c.alphabet = v.get<int>();
            else if (key == "env_channels") c.env_channels = v.get<int>();
            else if (key == "mean_degree") c.mean_degree = v.get<double>();
            else if (key == "mutants") c.mutants = v.get<int>();
            else if (key == "max_mutations") c.max_mutations = v.get<int>();
            else if (key == "anneal_steps") c.anneal_steps = v.get<int>();
            else if (key == "train_fraction") c.train_fraction = v.get<double>();
            else if (key == "val_fraction") c.val_fraction = v.get<double>();
            else if (key == "test_fraction") c.test_fraction = v.get<double>();
            else throw ConfigError("unknown world config key '" + key + "'");
        }
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("bad world config value: ") + e.what());
    }
    return c;
}

Json reproduce_config_to_json(const ReproduceConfig& c) {
    return {{"seed", c.seed},
            {"hidden", c.hidden},
            {"T", c.T},
            {"designs_per_structure", c.designs_per_structure},
            {"eval_samples", c.eval_samples},
            {"world", world_config_to_json(c.world)},
            {"prior", train_config_to_json(c.prior)},
            {"pretrain", train_config_to_json(c.pretrain)},
            {"pairing",
             {{"top_frac", c.pairing.top_frac},
              {"bottom_frac", c.pairing.bottom_frac},
              {"pairs_per_structure", c.pairing.pairs_per_structure},
              {"seed", c.pairing.seed}}},
            {"finetune", train_config_to_json(c.finetune)},
            {"smoke",
             {{"length", c.smoke.length},
              {"chains", c.smoke.chains},
              {"threshold", c.smoke.threshold},
              {"train", train_config_to_json(c.smoke.train)}}}};
}

void apply_reproduce_config(const Json& j, ReproduceConfig& c) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "hidden") c.hidden = v.get<int>();
            else if (key == "T") c.T = v.get<int>();
            else if (key == "designs_per_structure") c.designs_per_structure = v.get<int>();
            else if (key == "eval_samples") c.eval_samples = v.get<int>();
            else if (key == "world") c.world = world_config_from_json(v, c.world);
            else if (key == "prior") apply_train_config(v, c.prior);
            else if (key == "pretrain") apply_train_config(v, c.pretrain);
            else if (key == "finetune") apply_train_config(v, c.finetune);
            else if (key == "pairing") {
                for (const auto& [pk, pv] : v.items()) {
                    if (pk == "top_frac") c.pairing.top_frac = pv.get<double>();
                    else if (pk == "bottom_frac") c.pairing.bottom_frac = pv.get<double>();
                    else if (pk == "pairs_per_structure") c.pairing.pairs_per_structure = pv.get<int>();
                    else if (pk == "seed") c.pairing.seed = pv.get<std::uint64_t>();
                    else throw ConfigError("unknown pairing key '" + pk + "'");
                }
            } else if (key == "smoke") {
                for (const auto& [sk, sv] : v.items()) {
                    if (sk == "length") c.smoke.length = sv.get<int>();
                    else if (sk == "chains") c.smoke.chains = sv.get<int>();
                    else if (sk == "threshold") c.smoke.threshold = sv.get<double>();
                    else if (sk == "train") apply_train_config(sv, c.smoke.train);
                    else throw ConfigError("unknown smoke key '" + sk + "'");
                }
            } else {
                throw ConfigError("unknown config key '" + key + "'");
            }
        }
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
}

DesignSet sample_designs(const Model& model, const std::string& name, std::span<const WorldEntry> entries,
                         const NoiseSchedule& schedule, int per_structure, std::uint64_t seed) {
    if (per_structure < 1) throw ConfigError("designs per structure must be positive");
    DesignSet set;
    set.model = name;
    for (const auto& e : entries) {
        const Sequence prior = prior_encode(model.prior, e.structure);
        const StepPredictor step = [&](const Sequence& z, int t) { return predict(model.predictor, z, e.structure, t); };
        for (int k = 0; k < per_structure; ++k) {
            set.structure_ids.push_back(e.structure.id());
            set.designs.push_back(
                reverse_sample(step, prior, schedule, derive_seed(seed, {id_tag(e.structure.id()), static_cast<std::uint64_t>(k)})));
        }
    }
    return set;
}

Json reproduce(const ReproduceConfig& config, const std::filesystem::path& out_dir, const ProgressFn& progress) {
    auto note = [&](const std::string& msg) {
        if (progress) progress(msg);
    };
    std::filesystem::create_directories(out_dir);
    write_json(reproduce_config_to_json(config), out_dir / "config.json");
    const NoiseSchedule schedule = make_cosine_schedule(config.T);

    note("smoke test");
    const Json smoke = smoke_test(config, schedule, progress);

    note("generating world");
    WorldConfig wc = config.world;
    const std::vector<WorldEntry> world = gen_world(wc);
    save_world(world, out_dir / "world.jsonl");
    const auto test = entries_of(world, "test");

    note("training prior head");
    Model init;
    init.prior = train_prior_head(world, config.prior);
    init.predictor = init_params(derive_seed(config.seed, {0x696e6974}), config.hidden, wc.alphabet, config.T,
                                 world.front().structure.feature_width());

    note("pretraining");
    const TrainResult pre = pretrain(world, init, schedule, config.pretrain);
    const Model& ref = pre.model;
    save_checkpoint({ref, schedule, train_config_to_json(config.pretrain), std::nullopt}, out_dir / "ref.ckpt.json");
    note("pretraining done, best epoch " + std::to_string(pre.best_epoch));

    std::vector<MutantRecord> records;
    for (const auto& e : world) {
        if (e.split == "train") records.insert(records.end(), e.mutants.begin(), e.mutants.end());
    }
    const auto pairs = build_pairs(records, config.pairing);
    save_pairs(pairs, out_dir / "pairs.jsonl");
    note("built " + std::to_string(pairs.size()) + " preference pairs");

    const std::vector<std::pair<std::string, LossMode>> variants{
        {"full", LossMode::dpo_energy}, {"dpo_only", LossMode::dpo_only}, {"energy_only", LossMode::energy_only}};
    std::map<std::string, Model> models{{"ref", ref}};
    Json history = Json::object();
    for (const auto& [name, mode] : variants) {
        note("fine-tuning " + name);
        TrainConfig tc = config.finetune;
        tc.loss_mode = mode;
        const TrainResult r = dpo_finetune(world, pairs, ref, schedule, tc);
        models[name] = r.model;
        Json h = Json::array();
        for (const auto& rec : r.history) h.push_back({{"epoch", rec.epoch}, {"loss", rec.train_loss}, {"kbt", rec.kbt}});
        history[name] = h;
        save_checkpoint({r.model, schedule, train_config_to_json(tc), std::nullopt}, out_dir / (name + ".ckpt.json"));
    }

    note("evaluating");
    const ContextMap contexts = build_contexts(world, ref.prior);
    const std::uint64_t design_seed = derive_seed(config.seed, {0x64657369676e});
    const std::uint64_t eval_seed = derive_seed(config.seed, {0x6576616c});
    Json metrics = Json::object();
    std::map<std::string, DesignSet> designs;
    std::map<std::string, double> median_rec;
    std::map<std::string, MetricsReport> ddg;
    std::ofstream design_out(out_dir / "designs.jsonl");
    std::ofstream ddg_out(out_dir / "ddg_predictions.jsonl");
    std::vector<std::string> names{"ref", "full", "dpo_only", "energy_only"};
    for (const auto& name : names) {
        const Model& m = models.at(name);
        designs[name] = sample_designs(m, name, test, schedule, config.designs_per_structure, design_seed);
        Json buckets = Json::object();
        median_rec[name] = median_recovery(designs[name], test, &buckets);
        const MetricsReport ppl = perplexity(m.predictor, test, contexts, schedule, config.eval_samples, eval_seed);
        const EnergyLossState state{m.kbt, config.eval_samples, eval_seed};
        const DdgFold fold = predict_mutant_ddg(m.predictor, test, contexts, schedule, state);
        ddg[name] = ddg_metrics(fold.preds, fold.labels, fold.groups);
        for (size_t k = 0; k < designs[name].designs.size(); ++k)
            design_out << Json{{"model", name},
                               {"structure_id", designs[name].structure_ids[k]},
                               {"tokens", designs[name].designs[k].tokens()}}.dump()
                       << "\n";
        for (size_t k = 0; k < fold.preds.size(); ++k)
            ddg_out << Json{{"model", name}, {"structure_id", fold.groups[k]}, {"pred", fold.preds[k]},
                            {"label", fold.labels[k]}}.dump()
                    << "\n";
        metrics[name] = {{"median_recovery", median_rec[name]},
                         {"recovery_buckets", buckets},
                         {"perplexity", report_to_json(ppl)["buckets"]},
                         {"ddg", report_to_json(ddg[name])["scalars"]},
                         {"kbt", m.kbt}};
        note(name + ": recovery " + std::to_string(median_rec[name]) + ", ddG spearman " +
             std::to_string(ddg[name].scalar("spearman").value_or(NAN)));
    }

    std::vector<DesignSet> sets;
    for (const auto& name : names) sets.push_back(designs[name]);
    const auto rows = energy_table(sets, test);
    std::vector<std::vector<double>> table;
    Json energy = Json::object();
    for (const auto& row : rows) {
        std::vector<double> binding;
        for (size_t k = 0; k < row.energies.size(); ++k) {
            const auto& set = designs[row.model];
            for (const auto& e : test) {
                if (e.structure.id() == set.structure_ids[k]) {
                    binding.push_back(binding_energy(e.structure, e.potts, set.designs[k]));
                    break;
                }
            }
        }
        table.push_back({row.mean, mean(binding)});
        energy[row.model] = {{"mean", row.mean}, {"std", row.std}, {"binding_mean", mean(binding)}};
    }
    for (size_t m = 0; m < names.size(); ++m) energy[names[m]]["zscore"] = zscore(table, m);
    metrics["energy"] = energy;

    // Paired per-structure energy difference, fine-tuned minus reference.
    const auto e_full = per_structure_means(designs["full"], rows[1].energies);
    const auto e_ref = per_structure_means(designs["ref"], rows[0].energies);
    std::vector<double> diff;
    for (size_t s = 0; s < e_full.size(); ++s) diff.push_back(e_full[s] - e_ref[s]);
    const double n = static_cast<double>(diff.size());
    const double mean_diff = mean(diff);
    const double se = population_std(diff) * std::sqrt(n / (n - 1.0)) / std::sqrt(n);

    Json criteria = Json::array();
    const double smoke_rec = smoke["recovery"].get<double>();
    const bool c5 = smoke_rec >= config.smoke.threshold && mean_diff < 0.0 && -mean_diff > 2.0 * se;
    criteria.push_back(criterion(5, "energy direction", c5,
                                 {{"smoke_recovery", smoke_rec},
                                  {"mean_energy_ref", rows[0].mean},
                                  {"mean_energy_full", rows[1].mean},
                                  {"mean_paired_difference", mean_diff},
                                  {"standard_error", se},
                                  {"structures", diff.size()}}));
    const double rec_gap = median_rec["full"] - median_rec["ref"];
    criteria.push_back(criterion(6, "recovery preservation", std::abs(rec_gap) <= 5.0,
                                 {{"recovery_ref", median_rec["ref"]}, {"recovery_full", median_rec["full"]}, {"gap", rec_gap}}));
    const auto sp_full = ddg["full"].scalar("spearman");
    const auto au_full = ddg["full"].scalar("auroc");
    const auto sp_dpo = ddg["dpo_only"].scalar("spearman");
    const bool c7 = sp_full && au_full && sp_dpo && *sp_full >= 0.5 && *au_full >= 0.7 && *sp_dpo < *sp_full;
    criteria.push_back(criterion(7, "ddG ranking", c7,
                                 {{"spearman_full", sp_full ? Json(*sp_full) : Json(nullptr)},
                                  {"auroc_full", au_full ? Json(*au_full) : Json(nullptr)},
                                  {"spearman_dpo_only", sp_dpo ? Json(*sp_dpo) : Json(nullptr)},
                                  {"pairs", ddg["full"].scalar("n").value_or(0.0)}}));
    criteria.push_back(criterion(8, "ablation structure", median_rec["energy_only"] < median_rec["full"],
                                 {{"recovery_full", median_rec["full"]}, {"recovery_energy_only", median_rec["energy_only"]}}));

    Json report = {{"seed", config.seed},
                   {"smoke", smoke},
                   {"pretrain_best_epoch", pre.best_epoch},
                   {"pairs", pairs.size()},
                   {"finetune_history", history},
                   {"metrics", metrics},
                   {"criteria", criteria}};
    write_json(report, out_dir / "report.json");
    return report;
}

}  // namespace enerbridge
