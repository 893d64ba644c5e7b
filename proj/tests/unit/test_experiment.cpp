#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fedcopl/error.hpp"
#include "fedcopl/experiment.hpp"
#include "support.hpp"

namespace fedcopl {
namespace {

using nlohmann::json;
using test::TempDir;

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json base_config() { return read_json_file(test::data_dir() / "run_config.json"); }

TEST(ExperimentConfig, DefaultsFillMissingFields) {
  const auto c = parse_experiment(json{{"bundle_path", "b"}});
  EXPECT_EQ(c.bundle_path, "b");
  EXPECT_EQ(c.output_dir, "results");
  EXPECT_FALSE(c.partition_path);
  const FederationConfig defaults;
  EXPECT_EQ(c.federation.rounds, defaults.rounds);
  EXPECT_EQ(c.federation.aggregation_mode, AggregationMode::visual_only);
  EXPECT_EQ(c.federation.labeling_mode, LabelingMode::copl);
  EXPECT_DOUBLE_EQ(c.federation.temperature, 0.01);
}

TEST(ExperimentConfig, RelativePathsResolveAgainstBase) {
  const auto c = parse_experiment(json{{"bundle_path", "b"}, {"output_dir", "/abs/out"}}, "/cfg");
  EXPECT_EQ(c.bundle_path, std::filesystem::path("/cfg/b"));
  EXPECT_EQ(c.output_dir, std::filesystem::path("/abs/out"));
}

TEST(ExperimentConfig, UnknownKeysRejected) {
  EXPECT_THROW(parse_experiment(json{{"bundle_path", "b"}, {"bogus", 1}}), ValidationError);
  EXPECT_THROW(parse_experiment(json{{"bundle_path", "b"}, {"partition", {{"betta", 1}}}}), ValidationError);
  EXPECT_THROW(parse_experiment(json{{"bundle_path", "b"}, {"federation", {{"round", 3}}}}), ValidationError);
  EXPECT_THROW(parse_experiment(json{{"output_dir", "x"}}), ValidationError);
  EXPECT_THROW(parse_experiment(json::array()), ValidationError);
}

TEST(ExperimentConfig, BadValuesRejected) {
  EXPECT_THROW(parse_experiment(json{{"bundle_path", "b"}, {"federation", {{"rounds", "many"}}}}),
               ValidationError);
  EXPECT_THROW(parse_experiment(json{{"bundle_path", "b"}, {"federation", {{"aggregation_mode", "all"}}}}),
               ValidationError);
  EXPECT_THROW(parse_experiment(json{{"bundle_path", "b"}, {"federation", {{"participation_rate", 1.5}}}}),
               ValidationError);
}

TEST(Overrides, BareAndDottedKeys) {
  auto j = base_config();
  apply_override(j, "rounds=7");
  apply_override(j, "aggregation_mode=none");
  apply_override(j, "beta=0.25");
  apply_override(j, "federation.seed=9");
  apply_override(j, "output_dir=elsewhere");
  const auto c = parse_experiment(j);
  EXPECT_EQ(c.federation.rounds, 7u);
  EXPECT_EQ(c.federation.aggregation_mode, AggregationMode::none);
  EXPECT_DOUBLE_EQ(c.partition.beta, 0.25);
  EXPECT_EQ(c.federation.seed, 9u);
  EXPECT_EQ(c.output_dir, "elsewhere");
}

TEST(Overrides, MalformedRejected) {
  auto j = base_config();
  EXPECT_THROW(apply_override(j, "rounds"), ValidationError);
  EXPECT_THROW(apply_override(j, "=3"), ValidationError);
  EXPECT_THROW(apply_override(j, "nonsense=3"), ValidationError);
}

TEST(Experiment, WritesAllArtifactsAndReplaysFromSummary) {
  TempDir tmp;
  auto j = base_config();
  j["output_dir"] = (tmp / "first").string();
  const auto config = parse_experiment(j, test::data_dir());
  const auto outcome = run_experiment(config, 1);
  for (const char* f : {"rounds.jsonl", "rounds.csv", "wire.jsonl", "partition.json", "test_partition.json",
                        "summary.json"}) {
    EXPECT_TRUE(std::filesystem::exists(tmp / "first" / f)) << f;
  }
  EXPECT_EQ(outcome.result.rounds.size(), 4u);

  const auto summary = read_json_file(tmp / "first" / "summary.json");
  EXPECT_EQ(summary.at("schema"), kSummarySchema);
  EXPECT_EQ(summary.at("rounds"), 4);
  auto echo = summary.at("config");
  echo["output_dir"] = (tmp / "second").string();
  run_experiment(parse_experiment(echo), 2);
  EXPECT_EQ(slurp(tmp / "first" / "rounds.jsonl"), slurp(tmp / "second" / "rounds.jsonl"));

  auto replay = summary.at("config");
  replay["output_dir"] = (tmp / "third").string();
  replay["partition_path"] = (tmp / "first" / "partition.json").string();
  replay["partition"]["seed"] = 12345;  // ignored when a partition is replayed
  run_experiment(parse_experiment(replay), 1);
  EXPECT_EQ(slurp(tmp / "first" / "rounds.jsonl"), slurp(tmp / "third" / "rounds.jsonl"));
}

TEST(Experiment, SavesPromptsOnRequest) {
  TempDir tmp;
  auto j = base_config();
  j["output_dir"] = tmp.path().string();
  j["save_prompts"] = true;
  j["federation"]["rounds"] = 1;
  const auto outcome = run_experiment(parse_experiment(j, test::data_dir()), 1);
  const auto back = load_prompt_state(tmp / "prompts" / "client_002");
  EXPECT_EQ(back.visual, outcome.result.final_state.client_states[2].visual);
}

RunDigest digest(const std::string& label, double acc, std::optional<double> pseudo) {
  RunDigest d;
  d.label = label;
  d.labeling_mode = "copl";
  d.aggregation_mode = "visual_only";
  d.final_accuracy = acc;
  d.global_accuracy = acc - 0.1;
  d.zero_shot_accuracy = 0.7;
  d.pseudo_label_accuracy = pseudo;
  d.mean_drift_visual = 1.5;
  return d;
}

TEST(Report, DeltasRelativeToFirstRun) {
  const std::vector<RunDigest> runs{digest("a", 0.80, 0.9), digest("b", 0.75, 0.85), digest("c", 0.9, std::nullopt)};
  const auto t = make_report_table(runs);
  ASSERT_EQ(t.rows.size(), 3u);
  ASSERT_EQ(t.header.size(), t.rows[0].size());
  EXPECT_EQ(t.rows[0][3], "80.00");
  EXPECT_EQ(t.rows[0][5], "+0.00");
  EXPECT_EQ(t.rows[1][5], "-5.00");
  EXPECT_EQ(t.rows[1][8], "-5.00");
  EXPECT_EQ(t.rows[2][5], "+10.00");
  EXPECT_EQ(t.rows[2][7], "-");
  EXPECT_EQ(t.rows[2][8], "-");
  EXPECT_EQ(t.rows[0][9], "1.5000");
  EXPECT_EQ(t.rows[0][10], "-");
  const auto csv = t.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "run,labeling,aggregation,final_acc,zero_shot,delta_acc,global_acc,"
                                           "pseudo_acc,delta_pseudo,xi_visual,xi_text");
  const auto text = t.to_text();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
  EXPECT_EQ(text.find(" \n"), std::string::npos);
}

TEST(Report, DigestErrorsNameTheFile) {
  TempDir tmp;
  try {
    (void)read_run_digest(tmp.path());
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("summary.json"), std::string::npos) << e.what();
  }
  std::ofstream(tmp / "summary.json") << "{\"schema\": \"" << kSummarySchema << "\"}";
  try {
    (void)read_run_digest(tmp.path());
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("rounds.jsonl"), std::string::npos) << e.what();
  }
}

TEST(Report, DigestReadsRunOutput) {
  TempDir tmp;
  auto j = base_config();
  j["output_dir"] = tmp.path().string();
  const auto outcome = run_experiment(parse_experiment(j, test::data_dir()), 1);
  const auto d = read_run_digest(tmp.path());
  EXPECT_EQ(d.labeling_mode, "copl");
  EXPECT_EQ(d.aggregation_mode, "visual_only");
  EXPECT_DOUBLE_EQ(d.final_accuracy, outcome.result.rounds.back().mean_personalized_accuracy);
  EXPECT_DOUBLE_EQ(d.zero_shot_accuracy, outcome.result.rounds.back().zero_shot_local_accuracy);
}

}  // namespace
}  // namespace fedcopl
