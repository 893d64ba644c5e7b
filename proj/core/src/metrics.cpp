#include "fedcopl/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fedcopl/parallel.hpp"

namespace fedcopl {

namespace {

constexpr const char* kModule = "metrics";

template <typename T>
nlohmann::json optional_json(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <typename T>
std::optional<T> optional_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

std::string csv_number(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

}  // namespace

std::optional<double> drift_diversity(std::span<const std::vector<float>> drifts) {
  if (drifts.empty()) throw ValidationError(kModule, "drift diversity needs at least one drift");
  const std::size_t dim = drifts.front().size();
  std::vector<double> sum(dim, 0.0);
  double numerator = 0.0;
  for (const auto& m : drifts) {
    if (m.size() != dim) throw ValidationError(kModule, "drift dimension mismatch");
    numerator += squared_norm(m);
    for (std::size_t i = 0; i < dim; ++i) sum[i] += static_cast<double>(m[i]);
  }
  const double denominator = squared_norm(std::span<const double>(sum));
  if (std::sqrt(denominator) < kDivergentDriftNorm) return std::nullopt;
  return numerator / denominator;
}

double pairwise_cosine_distance(std::span<const std::vector<float>> params) {
  if (params.size() < 2) throw ValidationError(kModule, "cosine distance needs at least two vectors");
  std::vector<double> norms(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != params[0].size()) throw ValidationError(kModule, "vector dimension mismatch");
    norms[i] = std::sqrt(squared_norm(params[i]));
    if (!(norms[i] > 0.0)) throw ValidationError(kModule, "cosine distance of a zero vector");
  }
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t j = i + 1; j < params.size(); ++j) {
      total += 1.0 - dot(params[i], params[j]) / (norms[i] * norms[j]);
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

double accuracy(const SimilarityClassifier& classifier, const Matrix& embeddings,
                std::span<const ClassId> labels) {
  if (labels.empty()) throw ValidationError(kModule, "accuracy of an empty set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (classifier.predict(embeddings.row(i)) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double accuracy(const SimilarityClassifier& classifier, const Matrix& embeddings,
                std::span<const ClassId> labels, std::span<const std::size_t> rows) {
  if (rows.empty()) throw ValidationError(kModule, "accuracy of an empty set");
  std::size_t correct = 0;
  for (auto i : rows) {
    if (i >= labels.size()) throw ValidationError(kModule, "test row out of range");
    if (classifier.predict(embeddings.row(i)) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

namespace {

template <typename Score>
AccuracySummary per_client_accuracy(std::span<const PromptState> states,
                                    std::span<const float> global_visual, AggregationMode mode,
                                    double temperature, std::size_t threads, Score score) {
  AccuracySummary out;
  out.per_client.assign(states.size(), 0.0);
  parallel_for(states.size(), threads, [&](std::size_t k) {
    const auto& s = states[k];
    const auto visual = shares_visual(mode) ? global_visual : std::span<const float>(s.visual);
    const SimilarityClassifier classifier(s.base_text, s.text, temperature, visual);
    out.per_client[k] = score(classifier, k);
  });
  double total = 0.0;
  for (double a : out.per_client) total += a;
  out.mean = states.empty() ? 0.0 : total / static_cast<double>(states.size());
  return out;
}

}  // namespace

AccuracySummary evaluate_accuracy(std::span<const PromptState> states,
                                  std::span<const float> global_visual, const EmbeddingBundle& bundle,
                                  AggregationMode mode, double temperature, std::size_t threads) {
  if (bundle.test_size() == 0) throw ValidationError(kModule, "test set is empty");
  return per_client_accuracy(states, global_visual, mode, temperature, threads,
                             [&](const SimilarityClassifier& classifier, std::size_t) {
                               return accuracy(classifier, bundle.test_embeddings, bundle.test_labels);
                             });
}

AccuracySummary evaluate_local_accuracy(std::span<const PromptState> states,
                                        std::span<const float> global_visual,
                                        const EmbeddingBundle& bundle, const ClientPartition& test_shards,
                                        AggregationMode mode, double temperature, std::size_t threads) {
  if (test_shards.num_clients() != states.size()) {
    throw ValidationError(kModule, "one test shard per client required");
  }
  return per_client_accuracy(states, global_visual, mode, temperature, threads,
                             [&](const SimilarityClassifier& classifier, std::size_t k) {
                               return accuracy(classifier, bundle.test_embeddings, bundle.test_labels,
                                               test_shards.assignments[k]);
                             });
}

std::optional<double> pseudo_label_accuracy(std::span<const PseudoDataset> datasets,
                                            std::span<const ClassId> train_labels) {
  std::size_t total = 0;
  std::size_t correct = 0;
  for (const auto& d : datasets) {
    for (const auto& [index, label] : d.pairs) {
      ++total;
      if (train_labels[index] == label) ++correct;
    }
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(total);
}

double coefficient_of_variation(std::span<const std::uint64_t> counts) {
  if (counts.empty()) return 0.0;
  double mean = 0.0;
  for (auto c : counts) mean += static_cast<double>(c);
  mean /= static_cast<double>(counts.size());
  if (mean == 0.0) return 0.0;
  double var = 0.0;
  for (auto c : counts) var += (static_cast<double>(c) - mean) * (static_cast<double>(c) - mean);
  var /= static_cast<double>(counts.size());
  return std::sqrt(var) / mean;
}

void to_json(nlohmann::json& j, const RoundReport& r) {
  j = nlohmann::json{{"schema", kRoundReportSchema},
                     {"round", r.round},
                     {"mean_personalized_accuracy", r.mean_personalized_accuracy},
                     {"per_client_accuracy", r.per_client_accuracy},
                     {"mean_global_accuracy", r.mean_global_accuracy},
                     {"per_client_global_accuracy", r.per_client_global_accuracy},
                     {"zero_shot_accuracy", r.zero_shot_accuracy},
                     {"zero_shot_local_accuracy", r.zero_shot_local_accuracy},
                     {"pseudo_label_accuracy", optional_json(r.pseudo_label_accuracy)},
                     {"per_class_selected_counts", r.per_class_selected_counts},
                     {"drift_diversity_visual", optional_json(r.drift_diversity_visual)},
                     {"drift_diversity_text", optional_json(r.drift_diversity_text)},
                     {"mean_pairwise_cosine_distance_visual",
                      optional_json(r.mean_pairwise_cosine_distance_visual)},
                     {"mean_pairwise_cosine_distance_text",
                      optional_json(r.mean_pairwise_cosine_distance_text)},
                     {"wire_bytes", r.wire_bytes},
                     {"wire_floats", r.wire_floats},
                     {"participants", r.participants},
                     {"mean_train_loss", optional_json(r.mean_train_loss)},
                     {"refreshed", r.refreshed},
                     {"allocation_degenerate", r.allocation_degenerate},
                     {"skipped", r.skipped}};
}

void from_json(const nlohmann::json& j, RoundReport& r) {
  if (j.value("schema", std::string()) != kRoundReportSchema) {
    throw ValidationError(kModule, "unsupported round report schema");
  }
  r.round = j.at("round").get<std::size_t>();
  r.mean_personalized_accuracy = j.at("mean_personalized_accuracy").get<double>();
  r.per_client_accuracy = j.at("per_client_accuracy").get<std::vector<double>>();
  r.mean_global_accuracy = j.at("mean_global_accuracy").get<double>();
  r.per_client_global_accuracy = j.at("per_client_global_accuracy").get<std::vector<double>>();
  r.zero_shot_accuracy = j.at("zero_shot_accuracy").get<double>();
  r.zero_shot_local_accuracy = j.at("zero_shot_local_accuracy").get<double>();
  r.pseudo_label_accuracy = optional_from<double>(j, "pseudo_label_accuracy");
  r.per_class_selected_counts = j.at("per_class_selected_counts").get<std::vector<std::uint64_t>>();
  r.drift_diversity_visual = optional_from<double>(j, "drift_diversity_visual");
  r.drift_diversity_text = optional_from<double>(j, "drift_diversity_text");
  r.mean_pairwise_cosine_distance_visual = optional_from<double>(j, "mean_pairwise_cosine_distance_visual");
  r.mean_pairwise_cosine_distance_text = optional_from<double>(j, "mean_pairwise_cosine_distance_text");
  r.wire_bytes = j.at("wire_bytes").get<std::uint64_t>();
  r.wire_floats = j.value("wire_floats", std::uint64_t{0});
  r.participants = j.at("participants").get<std::vector<std::size_t>>();
  r.mean_train_loss = optional_from<double>(j, "mean_train_loss");
  r.refreshed = j.value("refreshed", false);
  r.allocation_degenerate = j.value("allocation_degenerate", false);
  r.skipped = j.value("skipped", false);
}

std::string round_report_csv_header() {
  return "round,mean_personalized_accuracy,mean_global_accuracy,zero_shot_accuracy,"
         "zero_shot_local_accuracy,pseudo_label_accuracy,"
         "drift_diversity_visual,drift_diversity_text,mean_pairwise_cosine_distance_visual,"
         "mean_pairwise_cosine_distance_text,wire_bytes,wire_floats,num_participants,"
         "mean_train_loss,refreshed,skipped";
}

std::string round_report_csv_row(const RoundReport& r) {
  std::ostringstream os;
  os << r.round << ',' << csv_number(r.mean_personalized_accuracy) << ','
     << csv_number(r.mean_global_accuracy) << ',' << csv_number(r.zero_shot_accuracy) << ','
     << csv_number(r.zero_shot_local_accuracy) << ',' << csv_number(r.pseudo_label_accuracy) << ','
     << csv_number(r.drift_diversity_visual) << ',' << csv_number(r.drift_diversity_text) << ','
     << csv_number(r.mean_pairwise_cosine_distance_visual) << ','
     << csv_number(r.mean_pairwise_cosine_distance_text) << ',' << r.wire_bytes << ','
     << r.wire_floats << ',' << r.participants.size() << ',' << csv_number(r.mean_train_loss) << ','
     << (r.refreshed ? 1 : 0) << ',' << (r.skipped ? 1 : 0);
  return os.str();
}

}  // namespace fedcopl
