#include "fedcopl/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace fedcopl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kModule = "experiment";

const std::set<std::string> kTopLevelKeys = {"bundle_path", "output_dir", "partition_path",
                                             "save_prompts", "partition", "federation"};
const std::set<std::string> kPartitionKeys = {"kind", "beta", "classes_per_client", "num_clients", "seed"};

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

std::string percent(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", *v * 100.0);
  return buf;
}

std::string signed_percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.2f", v * 100.0);
  return buf;
}

std::string fixed(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

std::optional<double> mean_of(const std::vector<std::optional<double>>& values) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& v : values) {
    if (v) {
      total += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return total / static_cast<double>(n);
}

}  // namespace

ExperimentConfig parse_experiment(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ValidationError(kModule, "experiment config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!kTopLevelKeys.contains(key)) throw ValidationError(kModule, "unknown config key '" + key + "'");
  }
  ExperimentConfig c;
  try {
    if (!j.contains("bundle_path")) throw ValidationError(kModule, "config needs 'bundle_path'");
    c.bundle_path = resolve(j.at("bundle_path").get<std::string>(), base_dir);
    c.output_dir = resolve(j.value("output_dir", std::string("results")), base_dir);
    if (j.contains("partition_path") && !j.at("partition_path").is_null()) {
      c.partition_path = resolve(j.at("partition_path").get<std::string>(), base_dir);
    }
    c.save_prompts = j.value("save_prompts", false);
    if (j.contains("partition")) {
      for (const auto& [key, _] : j.at("partition").items()) {
        if (!kPartitionKeys.contains(key)) throw ValidationError(kModule, "unknown partition key '" + key + "'");
      }
      c.partition = j.at("partition").get<PartitionSpec>();
    }
    if (j.contains("federation")) from_json(j.at("federation"), c.federation);
  } catch (const json::exception& e) {
    throw ValidationError(kModule, std::string("bad config value: ") + e.what());
  }
  c.federation.validate();
  return c;
}

json to_json(const ExperimentConfig& c) {
  json fed;
  to_json(fed, c.federation);
  return {{"bundle_path", fs::absolute(c.bundle_path).lexically_normal().string()},
          {"output_dir", fs::absolute(c.output_dir).lexically_normal().string()},
          {"partition_path", c.partition_path ? json(fs::absolute(*c.partition_path).string()) : json(nullptr)},
          {"save_prompts", c.save_prompts},
          {"partition", json(c.partition)},
          {"federation", fed}};
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ValidationError(kModule, "override must look like key=value, got '" + assignment + "'");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }

  std::vector<std::string> path;
  if (key.find('.') != std::string::npos) {
    std::stringstream ss(key);
    for (std::string part; std::getline(ss, part, '.');) path.push_back(part);
  } else {
    static const FederationConfig defaults;
    json fed_keys;
    to_json(fed_keys, defaults);
    if (fed_keys.contains(key)) {
      path = {"federation", key};
    } else if (kPartitionKeys.contains(key)) {
      path = {"partition", key};
    } else if (kTopLevelKeys.contains(key)) {
      path = {key};
    } else {
      throw ValidationError(kModule, "unknown override key '" + key + "'");
    }
  }
  json* node = &config;
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    if (!node->contains(path[i])) (*node)[path[i]] = json::object();
    node = &(*node)[path[i]];
  }
  (*node)[path.back()] = value;
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(kModule, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(kModule, "missing file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(kModule, "malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_rounds_jsonl(const fs::path& path, std::span<const RoundReport> rounds) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(kModule, "cannot write " + path.string());
  for (const auto& r : rounds) out << json(r).dump() << '\n';
}

void write_wire_jsonl(const fs::path& path, std::span<const WireMessage> wire) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(kModule, "cannot write " + path.string());
  for (const auto& m : wire) out << json(m).dump() << '\n';
}

json make_summary(const ExperimentConfig& config, const EmbeddingBundle& bundle, const RunResult& result,
                  double wall_seconds) {
  std::vector<std::optional<double>> xi_visual;
  std::vector<std::optional<double>> xi_text;
  for (const auto& r : result.rounds) {
    xi_visual.push_back(r.drift_diversity_visual);
    xi_text.push_back(r.drift_diversity_text);
  }
  const auto& last = result.rounds.back();
  const auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"schema", kSummarySchema},
          {"config", to_json(config)},
          {"bundle",
           {{"name", bundle.name},
            {"dim", bundle.dim},
            {"num_classes", bundle.num_classes},
            {"train", bundle.train_size()},
            {"test", bundle.test_size()}}},
          {"final",
           {{"round", last.round},
            {"mean_personalized_accuracy", last.mean_personalized_accuracy},
            {"per_client_accuracy", last.per_client_accuracy},
            {"mean_global_accuracy", last.mean_global_accuracy},
            {"zero_shot_accuracy", last.zero_shot_accuracy},
            {"zero_shot_local_accuracy", last.zero_shot_local_accuracy},
            {"pseudo_label_accuracy", opt(last.pseudo_label_accuracy)},
            {"mean_drift_diversity_visual", opt(mean_of(xi_visual))},
            {"mean_drift_diversity_text", opt(mean_of(xi_text))}}},
          {"rounds", result.rounds.size()},
          {"wall_time_seconds", wall_seconds}};
}

ExperimentOutcome run_experiment(const ExperimentConfig& config, std::size_t threads) {
  const auto start = std::chrono::steady_clock::now();
  const auto bundle = load_bundle(config.bundle_path);
  ClientPartition part;
  if (config.partition_path) {
    part = read_json_file(*config.partition_path).get<ClientPartition>();
  } else {
    part = partition(bundle, config.partition);
  }
  auto result = run(bundle, part, config.federation, RunOptions{threads});
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  std::error_code ec;
  fs::create_directories(config.output_dir, ec);
  if (ec) throw Error(kModule, "cannot create output directory " + config.output_dir.string());
  write_rounds_jsonl(config.output_dir / "rounds.jsonl", result.rounds);
  write_wire_jsonl(config.output_dir / "wire.jsonl", result.wire);
  write_json_file(config.output_dir / "partition.json", json(part));
  write_json_file(config.output_dir / "test_partition.json", json(result.test_shards));
  {
    std::ofstream csv(config.output_dir / "rounds.csv", std::ios::trunc);
    if (!csv) throw Error(kModule, "cannot write rounds.csv");
    csv << round_report_csv_header() << '\n';
    for (const auto& r : result.rounds) csv << round_report_csv_row(r) << '\n';
  }
  if (config.save_prompts) {
    const auto& states = result.final_state.client_states;
    for (std::size_t k = 0; k < states.size(); ++k) {
      char name[32];
      std::snprintf(name, sizeof name, "client_%03zu", k);
      write_prompt_state(states[k], config.output_dir / "prompts" / name);
    }
  }
  auto summary = make_summary(config, bundle, result, wall);
  write_json_file(config.output_dir / "summary.json", summary);
  return {std::move(result), std::move(summary)};
}

RunDigest read_run_digest(const fs::path& dir) {
  const auto summary_path = dir / "summary.json";
  const auto rounds_path = dir / "rounds.jsonl";
  if (!fs::exists(summary_path)) throw Error(kModule, "missing file " + summary_path.string());
  if (!fs::exists(rounds_path)) throw Error(kModule, "missing file " + rounds_path.string());
  const auto summary = read_json_file(summary_path);
  RunDigest d;
  try {
    if (summary.value("schema", std::string()) != kSummarySchema) {
      throw Error(kModule, "unsupported summary schema in " + summary_path.string());
    }
    d.label = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
    d.labeling_mode = summary.at("config").at("federation").at("labeling_mode").get<std::string>();
    d.aggregation_mode = summary.at("config").at("federation").at("aggregation_mode").get<std::string>();
    const auto& fin = summary.at("final");
    d.final_accuracy = fin.at("mean_personalized_accuracy").get<double>();
    d.global_accuracy = fin.at("mean_global_accuracy").get<double>();
    d.zero_shot_accuracy = fin.at("zero_shot_local_accuracy").get<double>();
    const auto opt = [&](const char* key) -> std::optional<double> {
      if (!fin.contains(key) || fin.at(key).is_null()) return std::nullopt;
      return fin.at(key).get<double>();
    };
    d.pseudo_label_accuracy = opt("pseudo_label_accuracy");
    d.mean_drift_visual = opt("mean_drift_diversity_visual");
    d.mean_drift_text = opt("mean_drift_diversity_text");
  } catch (const json::exception& e) {
    throw Error(kModule, "malformed " + summary_path.string() + ": " + e.what());
  }
  // The rounds file must parse too; a truncated run is reported as malformed.
  std::ifstream in(rounds_path);
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    try {
      (void)json::parse(line).get<RoundReport>();
    } catch (const std::exception& e) {
      throw Error(kModule, "malformed " + rounds_path.string() + " line " + std::to_string(lines + 1) + ": " + e.what());
    }
    ++lines;
  }
  if (lines == 0) throw Error(kModule, "empty " + rounds_path.string());
  return d;
}

ReportTable make_report_table(std::span<const RunDigest> runs) {
  ReportTable t;
  t.header = {"run", "labeling", "aggregation", "final_acc", "zero_shot", "delta_acc",
              "global_acc", "pseudo_acc", "delta_pseudo", "xi_visual", "xi_text"};
  if (runs.empty()) return t;
  const auto& ref = runs.front();
  for (const auto& r : runs) {
    std::string delta_pseudo = "-";
    if (r.pseudo_label_accuracy && ref.pseudo_label_accuracy) {
      delta_pseudo = signed_percent(*r.pseudo_label_accuracy - *ref.pseudo_label_accuracy);
    }
    t.rows.push_back({r.label, r.labeling_mode, r.aggregation_mode, percent(r.final_accuracy),
                      percent(r.zero_shot_accuracy), signed_percent(r.final_accuracy - ref.final_accuracy),
                      percent(r.global_accuracy), percent(r.pseudo_label_accuracy), delta_pseudo,
                      fixed(r.mean_drift_visual), fixed(r.mean_drift_text)});
  }
  return t;
}

std::string ReportTable::to_text() const {
  std::vector<std::size_t> width(header.size());
  for (std::size_t i = 0; i < header.size(); ++i) width[i] = header[i].size();
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::ostringstream os;
  const auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) os << "  ";
      os << cells[i];
      if (i + 1 < cells.size()) os << std::string(width[i] - cells[i].size(), ' ');
    }
    os << '\n';
  };
  line(header);
  for (const auto& row : rows) line(row);
  return os.str();
}

std::string ReportTable::to_csv() const {
  std::ostringstream os;
  const auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
    os << '\n';
  };
  line(header);
  for (const auto& row : rows) line(row);
  return os.str();
}

}  // namespace fedcopl
