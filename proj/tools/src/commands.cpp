#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fedcopl/embedding_store.hpp"
#include "fedcopl/error.hpp"
#include "fedcopl/experiment.hpp"
#include "fedcopl/metrics.hpp"
#include "fedcopl/parallel.hpp"
#include "fedcopl/partitioner.hpp"
#include "fedcopl/synthetic.hpp"

namespace fedcopl::cli {

namespace {

namespace fs = std::filesystem;

struct PartitionArgs {
  std::string bundle;
  std::string kind = "dirichlet";
  std::optional<double> beta;
  std::size_t classes_per_client = 2;
  std::size_t clients = 10;
  std::uint64_t seed = 0;
  std::string out = "partition.json";
};

struct RunArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::size_t> threads;
  std::optional<std::string> out;
};

struct ReportArgs {
  std::vector<std::string> dirs;
  std::optional<std::string> csv;
};

struct SynthArgs {
  SyntheticSpec spec;
  std::string out;
};

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
  return buf;
}

void print_histogram(std::ostream& out, const ClientPartition& part, const EmbeddingBundle& bundle) {
  const auto hist = class_histogram(part, bundle.train_labels, bundle.num_classes);
  char buf[32];
  out << "client    size";
  for (std::size_t c = 0; c < bundle.num_classes; ++c) {
    std::snprintf(buf, sizeof buf, " %6s", ("c" + std::to_string(c)).c_str());
    out << buf;
  }
  out << '\n';
  for (std::size_t k = 0; k < hist.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%6zu %7zu", k, part.assignments[k].size());
    out << buf;
    for (auto n : hist[k]) {
      std::snprintf(buf, sizeof buf, " %6zu", n);
      out << buf;
    }
    out << '\n';
  }
}

int cmd_partition(const PartitionArgs& a, std::ostream& out) {
  PartitionSpec spec;
  spec.kind = partition_kind_from_string(a.kind);
  if (spec.kind == PartitionKind::dirichlet) {
    if (!a.beta) throw ValidationError("cli", "--beta is required for --kind dirichlet");
    spec.beta = *a.beta;
  } else if (a.beta) {
    spec.beta = *a.beta;
  }
  spec.classes_per_client = a.classes_per_client;
  spec.num_clients = a.clients;
  spec.seed = a.seed;
  const auto bundle = load_bundle(a.bundle);
  const auto part = partition(bundle, spec);
  write_json_file(a.out, {{"spec", spec}, {"num_clients", part.num_clients()},
                          {"assignments", part.assignments}});
  print_histogram(out, part, bundle);
  out << "wrote " << a.out << '\n';
  return kExitOk;
}

int cmd_run(const RunArgs& a, std::ostream& out) {
  const fs::path config_path = a.config;
  if (!fs::exists(config_path)) throw ValidationError("cli", "config file not found: " + a.config);
  nlohmann::json j;
  try {
    std::ifstream in(config_path);
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("cli", "malformed config " + a.config + ": " + e.what());
  }
  for (const auto& o : a.overrides) apply_override(j, o);
  auto config = parse_experiment(j, fs::absolute(config_path).parent_path());
  if (a.out) config.output_dir = fs::absolute(*a.out);
  const std::size_t threads = a.threads ? std::max<std::size_t>(*a.threads, 1) : default_thread_count();
  const auto outcome = run_experiment(config, threads);
  for (const auto& r : outcome.result.rounds) {
    out << "round " << r.round << "  acc " << percent(r.mean_personalized_accuracy) << "  global "
        << percent(r.mean_global_accuracy) << "  pseudo "
        << (r.pseudo_label_accuracy ? percent(*r.pseudo_label_accuracy) : std::string("-")) << "  wire "
        << r.wire_bytes << " B" << (r.skipped ? "  (skipped)" : "") << '\n';
  }
  const auto& fin = outcome.summary.at("final");
  out << "zero-shot " << percent(fin.at("zero_shot_local_accuracy").get<double>()) << " (local), "
      << percent(fin.at("zero_shot_accuracy").get<double>()) << " (full test set)\n";
  out << "results in " << config.output_dir.string() << '\n';
  return kExitOk;
}

int cmd_report(const ReportArgs& a, std::ostream& out) {
  std::vector<RunDigest> digests;
  for (const auto& d : a.dirs) digests.push_back(read_run_digest(d));
  const auto table = make_report_table(digests);
  out << table.to_text();
  if (a.csv) {
    std::ofstream csv(*a.csv, std::ios::trunc);
    if (!csv) throw Error("cli", "cannot write " + *a.csv);
    csv << table.to_csv();
  }
  return kExitOk;
}

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const auto bundle = make_synthetic_bundle(a.spec);
  write_bundle(bundle, a.out);
  const SimilarityClassifier zero_shot(bundle.text_embeddings, kDefaultTemperature);
  out << "wrote " << a.out << " (" << bundle.train_size() << " train, " << bundle.test_size()
      << " test, zero-shot " << percent(accuracy(zero_shot, bundle.test_embeddings, bundle.test_labels))
      << ")\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Federated cooperative pseudo labeling simulator", "fedcopl"};
  app.require_subcommand(1);

  PartitionArgs pa;
  auto* partition_cmd = app.add_subcommand("partition", "Split a bundle's training set across clients");
  partition_cmd->add_option("--bundle", pa.bundle, "Embedding bundle directory")->required();
  partition_cmd->add_option("--kind", pa.kind, "dirichlet or quantity")
      ->check(CLI::IsMember({"dirichlet", "quantity"}));
  partition_cmd->add_option("--beta", pa.beta, "Dirichlet concentration");
  partition_cmd->add_option("--classes-per-client", pa.classes_per_client, "Classes per client (quantity)");
  partition_cmd->add_option("--clients", pa.clients, "Number of clients");
  partition_cmd->add_option("--seed", pa.seed, "Random seed");
  partition_cmd->add_option("--out", pa.out, "Output partition file");

  RunArgs ra;
  auto* run_cmd = app.add_subcommand("run", "Run an experiment from a JSON config");
  run_cmd->add_option("config", ra.config, "Experiment config file")->required();
  run_cmd->add_option("--override", ra.overrides, "key=value (repeatable)");
  run_cmd->add_option("--threads", ra.threads, "Worker threads (default $FEDCOPL_THREADS or 1)");
  run_cmd->add_option("--out", ra.out, "Results directory (overrides output_dir)");

  ReportArgs rep;
  auto* report_cmd = app.add_subcommand("report", "Compare results directories");
  report_cmd->add_option("dirs", rep.dirs, "Results directories")->required();
  report_cmd->add_option("--csv", rep.csv, "Also write the table as CSV");

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic Gaussian-cluster bundle");
  synth_cmd->add_option("--out", sa.out, "Bundle directory")->required();
  synth_cmd->add_option("--seed", sa.spec.seed, "Random seed");
  synth_cmd->add_option("--classes", sa.spec.num_classes, "Number of classes");
  synth_cmd->add_option("--dim", sa.spec.dim, "Embedding dimension");
  synth_cmd->add_option("--train-per-class", sa.spec.train_per_class, "Train samples per class");
  synth_cmd->add_option("--test-per-class", sa.spec.test_per_class, "Test samples per class");
  synth_cmd->add_option("--cluster-noise", sa.spec.cluster_noise, "Per-coordinate image noise");
  synth_cmd->add_option("--text-confusion", sa.spec.text_confusion, "Text blend toward the confuser class");
  synth_cmd->add_option("--text-noise", sa.spec.text_noise, "Random text misalignment norm");
  synth_cmd->add_option("--name", sa.spec.name, "Bundle name");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (partition_cmd->parsed()) return cmd_partition(pa, out);
    if (run_cmd->parsed()) return cmd_run(ra, out);
    if (report_cmd->parsed()) return cmd_report(rep, out);
    if (synth_cmd->parsed()) return cmd_synth(sa, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace fedcopl::cli
