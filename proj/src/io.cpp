#include "enerbridge/io.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "enerbridge/errors.hpp"

namespace enerbridge {

namespace {

using std::size_t;

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw DataError("write to '" + path.string() + "' failed");
}

std::string at_line(const std::filesystem::path& path, size_t line, const std::string& msg) {
    return path.string() + ":" + std::to_string(line) + ": " + msg;
}

template <class F>
void for_each_line(const std::filesystem::path& path, F&& fn) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::string line;
    size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            fn(line, n);
        } catch (const Json::exception& e) {
            throw DataError(at_line(path, n, e.what()));
        } catch (const VersionError&) {
            throw;
        } catch (const Error& e) {
            throw DataError(at_line(path, n, e.what()));
        }
    }
}

const Json& field(const Json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) throw DataError(std::string("missing field '") + key + "'");
    return j.at(key);
}

Sequence tokens_from_json(const Json& j, int K) { return Sequence(j.get<std::vector<Token>>(), K); }

Json optimizer_to_json(const OptimizerState& s) {
    return {{"step", s.step},
            {"beta1", s.constants.beta1},
            {"beta2", s.constants.beta2},
            {"eps", s.constants.eps},
            {"m", s.m},
            {"v", s.v}};
}

OptimizerState optimizer_from_json(const Json& j) {
    OptimizerState s;
    s.step = field(j, "step").get<long>();
    s.constants.beta1 = field(j, "beta1").get<double>();
    s.constants.beta2 = field(j, "beta2").get<double>();
    s.constants.eps = field(j, "eps").get<double>();
    s.m = field(j, "m").get<std::vector<std::vector<double>>>();
    s.v = field(j, "v").get<std::vector<std::vector<double>>>();
    if (s.m.size() != s.v.size()) throw DataError("optimizer moment lists differ in length");
    return s;
}

Json opt_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1" || s == "True" || s == "TRUE") return true;
    if (s == "false" || s == "0" || s == "False" || s == "FALSE" || s.empty()) return false;
    throw DataError("bad boolean '" + s + "'");
}

double parse_double(const std::string& s) {
    size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw DataError("bad number '" + s + "'");
    }
    if (used != s.size()) throw DataError("bad number '" + s + "'");
    return v;
}

Token parse_token(const std::string& s) {
    size_t used = 0;
    int v = 0;
    try {
        v = std::stoi(s, &used);
    } catch (const std::exception&) {
        throw DataError("bad token '" + s + "'");
    }
    if (used != s.size()) throw DataError("bad token '" + s + "'");
    return v;
}

MutantRecord make_record(const std::string& id, const Sequence& tokens, double score, bool higher_is_better,
                         double ddg) {
    if (id.empty()) throw DataError("empty structure_id");
    if (!std::isfinite(score)) throw DataError("non-finite score");
    return {id, tokens, higher_is_better ? -score : score, ddg};
}

}  // namespace

Sequence encode_sequence(std::string_view letters) {
    std::vector<Token> tokens;
    tokens.reserve(letters.size());
    for (char c : letters) {
        const auto pos = kAlphabet.find(c);
        if (pos == std::string_view::npos) throw DataError(std::string("letter '") + c + "' is not in the alphabet");
        tokens.push_back(static_cast<Token>(pos));
    }
    return Sequence(std::move(tokens), static_cast<int>(kAlphabet.size()));
}

std::string decode_sequence(const Sequence& seq) {
    if (seq.alphabet_size() != static_cast<int>(kAlphabet.size())) {
        throw DomainError("letter decoding needs a 20-token alphabet");
    }
    std::string out;
    for (Token t : seq.tokens()) out.push_back(kAlphabet[static_cast<size_t>(t)]);
    return out;
}

Json matrix_to_json(const Matrix& m) {
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.flat().begin(), m.flat().end())}};
}

Matrix matrix_from_json(const Json& j) {
    const auto rows = field(j, "rows").get<size_t>();
    const auto cols = field(j, "cols").get<size_t>();
    const auto data = field(j, "data").get<std::vector<double>>();
    if (data.size() != rows * cols) throw DataError("matrix data length does not match its shape");
    Matrix m(rows, cols);
    std::copy(data.begin(), data.end(), m.flat().begin());
    return m;
}

Json params_to_json(const PredictorParams& p) {
    Json tables = Json::object();
    p.for_each([&](const char* name, const Matrix& m) { tables[name] = matrix_to_json(m); });
    return {{"dims", {{"K", p.dims.K}, {"d", p.dims.d}, {"T", p.dims.T}, {"f", p.dims.f}}}, {"tables", tables}};
}

PredictorParams params_from_json(const Json& j) {
    const Json& dims = field(j, "dims");
    PredictorParams p;
    p.dims = {field(dims, "K").get<int>(), field(dims, "d").get<int>(), field(dims, "T").get<int>(),
              field(dims, "f").get<int>()};
    const Json& tables = field(j, "tables");
    p.for_each([&](const char* name, Matrix& m) { m = matrix_from_json(field(tables, name)); });
    p.validate();
    return p;
}

Json model_to_json(const Model& m) {
    return {{"predictor", params_to_json(m.predictor)},
            {"prior", {{"weight", matrix_to_json(m.prior.weight)}, {"bias", matrix_to_json(m.prior.bias)}}},
            {"kbt", m.kbt}};
}

Model model_from_json(const Json& j) {
    Model m;
    m.predictor = params_from_json(field(j, "predictor"));
    const Json& prior = field(j, "prior");
    m.prior.weight = matrix_from_json(field(prior, "weight"));
    m.prior.bias = matrix_from_json(field(prior, "bias"));
    if (m.prior.bias.rows() != 1 || m.prior.bias.cols() != m.prior.weight.cols()) {
        throw ShapeError("prior head bias does not match its weight");
    }
    m.kbt = field(j, "kbt").get<double>();
    if (!std::isfinite(m.kbt)) throw NumericalError("kbt is not finite");
    return m;
}

Json schedule_to_json(const NoiseSchedule& s) { return {{"kind", "betas"}, {"T", s.T}, {"betas", s.betas}}; }

NoiseSchedule schedule_from_json(const Json& j) {
    NoiseSchedule s = NoiseSchedule::from_betas(field(j, "betas").get<std::vector<double>>());
    if (s.T != field(j, "T").get<int>()) throw DataError("schedule length does not match T");
    return s;
}

Json train_config_to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"base_lr", c.base_lr},
            {"lr_schedule", c.lr_schedule == LrSchedule::noam ? "noam" : "constant"},
            {"warmup", c.warmup},
            {"noam_dim", c.noam_dim},
            {"seed", c.seed},
            {"loss_mode", to_string(c.loss_mode)},
            {"beta_dpo", c.dpo.beta_dpo},
            {"omega", c.dpo.omega == OmegaMode::constant ? "constant" : "loss_weight"},
            {"T", c.dpo.T},
            {"lambda_energy", c.total.lambda_energy},
            {"patience", c.patience},
            {"likelihood_samples", c.likelihood_samples}};
}

void apply_train_config(const Json& j, TrainConfig& c) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "epochs") c.epochs = value.get<int>();
            else if (key == "batch_size") c.batch_size = value.get<int>();
            else if (key == "base_lr") c.base_lr = value.get<double>();
            else if (key == "lr_schedule") {
                const auto s = value.get<std::string>();
                if (s == "noam") c.lr_schedule = LrSchedule::noam;
                else if (s == "constant") c.lr_schedule = LrSchedule::constant;
                else throw ConfigError("unknown lr_schedule '" + s + "'");
            } else if (key == "warmup") c.warmup = value.get<int>();
            else if (key == "noam_dim") c.noam_dim = value.get<int>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else if (key == "loss_mode") c.loss_mode = loss_mode_from_string(value.get<std::string>());
            else if (key == "beta_dpo") c.dpo.beta_dpo = value.get<double>();
            else if (key == "omega") {
                const auto s = value.get<std::string>();
                if (s == "constant") c.dpo.omega = OmegaMode::constant;
                else if (s == "loss_weight") c.dpo.omega = OmegaMode::loss_weight;
                else throw ConfigError("unknown omega '" + s + "'");
            } else if (key == "T") c.dpo.T = value.get<int>();
            else if (key == "lambda_energy") c.total.lambda_energy = value.get<double>();
            else if (key == "patience") c.patience = value.get<int>();
            else if (key == "likelihood_samples") c.likelihood_samples = value.get<int>();
            else throw ConfigError("unknown config key '" + key + "'");
        }
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
}

Json report_to_json(const MetricsReport& r) {
    Json scalars = Json::object();
    for (const auto& [k, v] : r.scalars) scalars[k] = opt_json(v);
    Json buckets = Json::object();
    for (const auto& [k, v] : r.buckets) buckets[k] = {{"perplexity", opt_json(v.perplexity)}, {"recovery", opt_json(v.recovery)}};
    Json per = Json::object();
    for (const auto& [k, v] : r.per_structure) {
        per[k] = {{"pearson", opt_json(v.pearson)}, {"spearman", opt_json(v.spearman)}, {"n", v.n}};
    }
    return {{"scalars", scalars}, {"buckets", buckets}, {"per_structure", per}, {"flags", r.flags}};
}

// ---------------------------------------------------------------------------

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) h = (h ^ c) * 0x100000001b3ULL;
    return h;
}

namespace {

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    Json payload = {{"model", model_to_json(ckpt.model)},
                    {"schedule", schedule_to_json(ckpt.schedule)},
                    {"config", ckpt.config},
                    {"optimizer", ckpt.optimizer ? optimizer_to_json(*ckpt.optimizer) : Json(nullptr)}};
    Json doc = {{"format", "enerbridge-checkpoint"},
                {"version", kCheckpointVersion},
                {"hash", hex64(fnv1a(payload.dump()))},
                {"payload", payload}};
    write_file(path, doc.dump(1) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    Json doc;
    try {
        doc = Json::parse(text);
    } catch (const Json::exception& e) {
        throw CorruptionError("checkpoint '" + path.string() + "' is unreadable: " + e.what());
    }
    if (!doc.is_object() || !doc.contains("version") || !doc.contains("payload") || !doc.contains("hash")) {
        throw CorruptionError("checkpoint '" + path.string() + "' is missing its header");
    }
    if (!doc["version"].is_number_integer() || doc["version"].get<int>() != kCheckpointVersion) {
        throw VersionError("checkpoint '" + path.string() + "' has unsupported version " + doc["version"].dump());
    }
    const Json& payload = doc["payload"];
    if (!doc["hash"].is_string() || doc["hash"].get<std::string>() != hex64(fnv1a(payload.dump()))) {
        throw CorruptionError("checkpoint '" + path.string() + "' fails its content hash");
    }
    try {
        Checkpoint ckpt;
        ckpt.model = model_from_json(field(payload, "model"));
        ckpt.schedule = schedule_from_json(field(payload, "schedule"));
        ckpt.config = field(payload, "config");
        if (!payload["optimizer"].is_null()) ckpt.optimizer = optimizer_from_json(payload["optimizer"]);
        return ckpt;
    } catch (const Json::exception& e) {
        throw CorruptionError("checkpoint '" + path.string() + "': " + e.what());
    }
}

// ---------------------------------------------------------------------------

Json world_entry_to_json(const WorldEntry& e) {
    const StructureContext& s = e.structure;
    Json contacts = Json::array();
    for (const auto& [i, j] : s.contact_pairs()) contacts.push_back({i, j});
    Json couplings = Json::array();
    for (size_t c = 0; c < s.contact_pairs().size(); ++c) {
        const auto [i, j] = s.contact_pairs()[c];
        couplings.push_back({{"i", i}, {"j", j}, {"table", matrix_to_json(e.potts.couplings()[c])}});
    }
    Json mutants = Json::array();
    for (const auto& m : e.mutants) {
        mutants.push_back(
            {{"structure_id", m.structure_id}, {"tokens", m.tokens.tokens()}, {"score", m.score}, {"ddg_vs_native", m.ddg_vs_native}});
    }
    return {{"structure",
             {{"id", s.id()},
              {"L", s.length()},
              {"chains", s.chains()},
              {"contacts", contacts},
              {"features", matrix_to_json(s.features())}}},
            {"potts", {{"h", matrix_to_json(e.potts.fields())}, {"J", couplings}}},
            {"native", e.native.tokens()},
            {"mutants", mutants},
            {"split", e.split}};
}

WorldEntry world_entry_from_json(const Json& j) {
    const Json& sj = field(j, "structure");
    const auto chains = field(sj, "chains").get<std::vector<int>>();
    if (field(sj, "L").get<size_t>() != chains.size()) throw DataError("structure L does not match its chain list");
    std::vector<std::pair<int, int>> contacts;
    for (const auto& c : field(sj, "contacts")) {
        const auto ij = c.get<std::vector<int>>();
        if (ij.size() != 2) throw DataError("contact must be an (i, j) pair");
        contacts.emplace_back(ij[0], ij[1]);
    }
    WorldEntry e;
    e.structure = StructureContext(field(sj, "id").get<std::string>(), chains, contacts,
                                   matrix_from_json(field(sj, "features")));
    const Json& pj = field(j, "potts");
    Matrix fields = matrix_from_json(field(pj, "h"));
    const int K = static_cast<int>(fields.cols());
    std::map<std::pair<int, int>, Matrix> tables;
    for (const auto& c : field(pj, "J")) {
        int a = field(c, "i").get<int>(), b = field(c, "j").get<int>();
        if (a > b) std::swap(a, b);
        if (!tables.emplace(std::pair{a, b}, matrix_from_json(field(c, "table"))).second) {
            throw DataError("duplicate coupling table");
        }
    }
    std::vector<Matrix> couplings;
    for (const auto& pair : e.structure.contact_pairs()) {
        const auto it = tables.find(pair);
        if (it == tables.end()) throw DataError("contact without a coupling table");
        couplings.push_back(it->second);
    }
    if (tables.size() != couplings.size()) throw DataError("coupling table for a pair that is not a contact");
    e.potts = PottsModel(e.structure, std::move(fields), std::move(couplings));
    e.native = tokens_from_json(field(j, "native"), K);
    if (e.native.length() != e.structure.length()) throw DataError("native length does not match the structure");
    for (const auto& mj : field(j, "mutants")) {
        MutantRecord m;
        m.structure_id = field(mj, "structure_id").get<std::string>();
        if (m.structure_id != e.structure.id()) throw DataError("mutant refers to another structure");
        m.tokens = tokens_from_json(field(mj, "tokens"), K);
        if (m.tokens.length() != e.structure.length()) throw DataError("mutant length does not match the structure");
        m.score = field(mj, "score").get<double>();
        m.ddg_vs_native = field(mj, "ddg_vs_native").get<double>();
        e.mutants.push_back(std::move(m));
    }
    e.split = j.contains("split") ? j["split"].get<std::string>() : std::string("train");
    if (e.split != "train" && e.split != "val" && e.split != "test") throw DataError("unknown split '" + e.split + "'");
    return e;
}

void save_world(std::span<const WorldEntry> world, const std::filesystem::path& path) {
    std::string text;
    for (const auto& e : world) text += world_entry_to_json(e).dump() + "\n";
    write_file(path, text);
}

std::vector<WorldEntry> load_world(const std::filesystem::path& path) {
    std::vector<WorldEntry> world;
    std::map<std::string, size_t> seen;
    for_each_line(path, [&](const std::string& line, size_t) {
        WorldEntry e = world_entry_from_json(Json::parse(line));
        if (!seen.emplace(e.structure.id(), world.size()).second) {
            throw DataError("duplicate structure id '" + e.structure.id() + "'");
        }
        world.push_back(std::move(e));
    });
    if (world.empty()) throw DataError("world file '" + path.string() + "' is empty");
    return world;
}

void save_pairs(std::span<const PreferencePair> pairs, const std::filesystem::path& path) {
    std::string text;
    for (const auto& p : pairs) {
        text += Json{{"structure_id", p.structure_id},
                     {"winner", p.winner.tokens()},
                     {"loser", p.loser.tokens()},
                     {"ddg_label", p.ddg_label}}
                    .dump() +
                "\n";
    }
    write_file(path, text);
}

std::vector<PreferencePair> load_pairs(const std::filesystem::path& path, int K, std::span<const WorldEntry> world) {
    std::map<std::string, int> lengths;
    for (const auto& e : world) lengths[e.structure.id()] = e.structure.length();
    std::vector<PreferencePair> pairs;
    for_each_line(path, [&](const std::string& line, size_t) {
        const Json j = Json::parse(line);
        PreferencePair p;
        p.structure_id = field(j, "structure_id").get<std::string>();
        p.winner = tokens_from_json(field(j, "winner"), K);
        p.loser = tokens_from_json(field(j, "loser"), K);
        p.ddg_label = field(j, "ddg_label").get<double>();
        if (p.winner.length() != p.loser.length()) throw DataError("winner and loser differ in length");
        if (!world.empty()) {
            const auto it = lengths.find(p.structure_id);
            if (it == lengths.end()) throw DataError("unknown structure id '" + p.structure_id + "'");
            if (it->second != p.winner.length()) throw DataError("pair length does not match its structure");
        }
        pairs.push_back(std::move(p));
    });
    return pairs;
}

std::vector<MutantRecord> load_external_scores(const std::filesystem::path& path, int K) {
    std::vector<MutantRecord> records;
    if (path.extension() == ".csv") {
        std::map<std::string, size_t> column;
        for_each_line(path, [&](const std::string& line, size_t) {
            const auto cells = split_csv(line);
            if (column.empty()) {
                for (size_t c = 0; c < cells.size(); ++c) column[cells[c]] = c;
                if (!column.count("structure_id") || !column.count("score") ||
                    (!column.count("sequence") && !column.count("tokens"))) {
                    throw DataError("header needs structure_id, score and sequence or tokens");
                }
                return;
            }
            if (cells.size() != column.size()) throw DataError("row has the wrong number of columns");
            auto cell = [&](const char* name) -> std::string {
                const auto it = column.find(name);
                return it == column.end() ? std::string() : cells[it->second];
            };
            Sequence tokens;
            if (column.count("sequence")) {
                tokens = encode_sequence(cell("sequence"));
            } else {
                std::vector<Token> t;
                std::istringstream ss(cell("tokens"));
                std::string word;
                while (ss >> word) t.push_back(parse_token(word));
                tokens = Sequence(std::move(t), K);
            }
            const std::string ddg = cell("ddg");
            records.push_back(make_record(cell("structure_id"), tokens, parse_double(cell("score")),
                                          parse_bool(cell("higher_is_better")), ddg.empty() ? 0.0 : parse_double(ddg)));
        });
        return records;
    }
    for_each_line(path, [&](const std::string& line, size_t) {
        const Json j = Json::parse(line);
        Sequence tokens = j.contains("sequence") ? encode_sequence(j["sequence"].get<std::string>())
                                                 : tokens_from_json(field(j, "tokens"), K);
        const bool hib = j.contains("higher_is_better") && j["higher_is_better"].get<bool>();
        const double ddg = j.contains("ddg") ? j["ddg"].get<double>() : 0.0;
        records.push_back(make_record(field(j, "structure_id").get<std::string>(), tokens,
                                      field(j, "score").get<double>(), hib, ddg));
    });
    return records;
}

void save_scores(std::span<const MutantRecord> records, const std::filesystem::path& path) {
    std::string text;
    for (const auto& r : records) {
        text += Json{{"structure_id", r.structure_id},
                     {"tokens", r.tokens.tokens()},
                     {"score", r.score},
                     {"higher_is_better", false},
                     {"ddg", r.ddg_vs_native}}
                    .dump() +
                "\n";
    }
    write_file(path, text);
}

void write_json(const Json& j, const std::filesystem::path& path) { write_file(path, j.dump(2) + "\n"); }

Json read_json(const std::filesystem::path& path) {
    try {
        return Json::parse(read_file(path));
    } catch (const Json::exception& e) {
        throw DataError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

}  // namespace enerbridge
