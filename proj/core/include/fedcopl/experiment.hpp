#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedcopl/federation.hpp"
#include "fedcopl/federation_config.hpp"
#include "fedcopl/partitioner.hpp"

namespace fedcopl {

inline constexpr const char* kSummarySchema = "fedcopl.summary/1";

// A complete, replayable experiment description.
//
// JSON layout:
//   { "bundle_path": str, "output_dir": str, "partition_path": str|null,
//     "save_prompts": bool, "partition": {PartitionSpec}, "federation": {FederationConfig} }
// Any missing field takes its default. Relative paths are resolved against
// `base_dir` when parsing.
struct ExperimentConfig {
  std::filesystem::path bundle_path;
  std::filesystem::path output_dir = "results";
  std::optional<std::filesystem::path> partition_path;  // replay a saved partition
  bool save_prompts = false;
  PartitionSpec partition;
  FederationConfig federation;
};

ExperimentConfig parse_experiment(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json to_json(const ExperimentConfig& config);

// `key=value`. Keys are dotted paths ("federation.rounds") or bare
// federation / partition / top-level keys ("aggregation_mode", "beta").
// Values are parsed as JSON when possible, else taken as strings.
void apply_override(nlohmann::json& config, const std::string& assignment);

struct ExperimentOutcome {
  RunResult result;
  nlohmann::json summary;
};

// Loads the bundle, partitions (or replays), runs the federation and writes
// rounds.jsonl, rounds.csv, wire.jsonl, partition.json, test_partition.json
// and summary.json to
// config.output_dir.
ExperimentOutcome run_experiment(const ExperimentConfig& config, std::size_t threads);

nlohmann::json make_summary(const ExperimentConfig& config, const EmbeddingBundle& bundle,
                            const RunResult& result, double wall_seconds);

void write_rounds_jsonl(const std::filesystem::path& path, std::span<const RoundReport> rounds);
void write_wire_jsonl(const std::filesystem::path& path, std::span<const WireMessage> wire);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

// What the report command needs from one results directory.
struct RunDigest {
  std::string label;
  std::string labeling_mode;
  std::string aggregation_mode;
  double final_accuracy = 0.0;      // personalized, on client test shards
  double global_accuracy = 0.0;     // full test set
  double zero_shot_accuracy = 0.0;  // on the same client test shards
  std::optional<double> pseudo_label_accuracy;
  std::optional<double> mean_drift_visual;
  std::optional<double> mean_drift_text;
};

// Throws Error naming the missing or malformed file.
RunDigest read_run_digest(const std::filesystem::path& dir);

struct ReportTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string to_text() const;
  std::string to_csv() const;
};

// One row per run; deltas are relative to the first run.
ReportTable make_report_table(std::span<const RunDigest> runs);

}  // namespace fedcopl
