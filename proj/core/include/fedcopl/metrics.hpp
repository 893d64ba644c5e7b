#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fedcopl/embedding_store.hpp"
#include "fedcopl/federation_config.hpp"
#include "fedcopl/partitioner.hpp"
#include "fedcopl/prompt_model.hpp"
#include "fedcopl/pseudo_labeler.hpp"

namespace fedcopl {

inline constexpr double kDivergentDriftNorm = 1e-12;
inline constexpr const char* kRoundReportSchema = "fedcopl.round_report/1";

// xi = sum_k |m_k|^2 / |sum_k m_k|^2. Returns nullopt ("divergent") when
// |sum_k m_k| < 1e-12.
std::optional<double> drift_diversity(std::span<const std::vector<float>> drifts);

// Mean over unordered pairs of 1 - cos(theta_ij). Needs >= 2 nonzero vectors.
double pairwise_cosine_distance(std::span<const std::vector<float>> params);

// Fraction of rows whose argmax prediction equals the label.
double accuracy(const SimilarityClassifier& classifier, const Matrix& embeddings,
                std::span<const ClassId> labels);

// Same over the listed rows only.
double accuracy(const SimilarityClassifier& classifier, const Matrix& embeddings,
                std::span<const ClassId> labels, std::span<const std::size_t> rows);

struct AccuracySummary {
  double mean = 0.0;
  std::vector<double> per_client;
};

// Each client classifies the full test set with its personalized model:
// the shared global visual offset when the mode aggregates visual prompts,
// its own otherwise, and always its own text offsets.
AccuracySummary evaluate_accuracy(std::span<const PromptState> states,
                                  std::span<const float> global_visual, const EmbeddingBundle& bundle,
                                  AggregationMode mode, double temperature, std::size_t threads = 1);

// Personalized evaluation: the same models, client k classifying only its
// own test shard test_shards.assignments[k].
AccuracySummary evaluate_local_accuracy(std::span<const PromptState> states,
                                        std::span<const float> global_visual,
                                        const EmbeddingBundle& bundle, const ClientPartition& test_shards,
                                        AggregationMode mode, double temperature, std::size_t threads = 1);

// Micro-averaged share of (index, pseudo label) pairs that match the hidden
// train label. nullopt when there are no pairs.
std::optional<double> pseudo_label_accuracy(std::span<const PseudoDataset> datasets,
                                            std::span<const ClassId> train_labels);

// Coefficient of variation (population std / mean) of a count vector.
double coefficient_of_variation(std::span<const std::uint64_t> counts);

struct RoundReport {
  std::size_t round = 0;
  double mean_personalized_accuracy = 0.0;   // on each client's own test shard
  std::vector<double> per_client_accuracy;
  double mean_global_accuracy = 0.0;         // every client on the full test set
  std::vector<double> per_client_global_accuracy;
  double zero_shot_accuracy = 0.0;           // full test set
  double zero_shot_local_accuracy = 0.0;     // mean over client test shards
  std::optional<double> pseudo_label_accuracy;
  std::vector<std::uint64_t> per_class_selected_counts;
  std::optional<double> drift_diversity_visual;
  std::optional<double> drift_diversity_text;
  std::optional<double> mean_pairwise_cosine_distance_visual;
  std::optional<double> mean_pairwise_cosine_distance_text;
  std::uint64_t wire_bytes = 0;
  std::uint64_t wire_floats = 0;
  std::vector<std::size_t> participants;
  std::optional<double> mean_train_loss;
  bool refreshed = false;
  bool allocation_degenerate = false;
  bool skipped = false;
};

void to_json(nlohmann::json& j, const RoundReport& r);
void from_json(const nlohmann::json& j, RoundReport& r);

std::string round_report_csv_header();
std::string round_report_csv_row(const RoundReport& r);

}  // namespace fedcopl
