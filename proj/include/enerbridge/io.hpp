#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "enerbridge/bridge.hpp"
#include "enerbridge/metrics.hpp"
#include "enerbridge/trainer.hpp"
#include "enerbridge/world.hpp"

namespace enerbridge {

using Json = nlohmann::json;

/// Token i is the i-th letter; K = 20 alphabets only.
inline constexpr std::string_view kAlphabet = "ACDEFGHIKLMNPQRSTVWY";

Sequence encode_sequence(std::string_view letters);
std::string decode_sequence(const Sequence& seq);

// ---------------------------------------------------------------------------
// JSON views of the domain types. Every from_json validates and throws
// DataError (or ShapeError/DomainError from the type constructors).

Json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j);

Json params_to_json(const PredictorParams& p);
PredictorParams params_from_json(const Json& j);

Json model_to_json(const Model& m);
Model model_from_json(const Json& j);

Json schedule_to_json(const NoiseSchedule& s);
NoiseSchedule schedule_from_json(const Json& j);

Json train_config_to_json(const TrainConfig& c);
/// Applies the keys present in `j` on top of `config`; unknown keys and bad
/// values throw ConfigError.
void apply_train_config(const Json& j, TrainConfig& config);

Json report_to_json(const MetricsReport& r);

// ---------------------------------------------------------------------------

struct Checkpoint {
    Model model;
    NoiseSchedule schedule;
    Json config = Json::object();
    std::optional<OptimizerState> optimizer;
};

inline constexpr int kCheckpointVersion = 1;

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws CorruptionError on unparsable content or hash mismatch and
/// VersionError on an unknown format version.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

Json world_entry_to_json(const WorldEntry& e);
WorldEntry world_entry_from_json(const Json& j);

void save_world(std::span<const WorldEntry> world, const std::filesystem::path& path);
std::vector<WorldEntry> load_world(const std::filesystem::path& path);

void save_pairs(std::span<const PreferencePair> pairs, const std::filesystem::path& path);
/// When `world` is given every structure id must resolve to one of its entries.
std::vector<PreferencePair> load_pairs(const std::filesystem::path& path, int K = 20,
                                       std::span<const WorldEntry> world = {});

/// CSV (header with structure_id, sequence or tokens, score and optionally
/// higher_is_better, ddg) or JSONL with the same keys. Scores marked
/// higher_is_better are negated. Token lists in CSV are space separated.
std::vector<MutantRecord> load_external_scores(const std::filesystem::path& path, int K = 20);
/// JSONL in the format read back by load_external_scores.
void save_scores(std::span<const MutantRecord> records, const std::filesystem::path& path);

void write_json(const Json& j, const std::filesystem::path& path);
Json read_json(const std::filesystem::path& path);

}  // namespace enerbridge
