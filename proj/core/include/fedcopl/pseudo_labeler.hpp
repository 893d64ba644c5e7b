#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fedcopl/embedding_store.hpp"
#include "fedcopl/matrix.hpp"

namespace fedcopl {

// Cosine-similarity softmax classifier: probs_c = softmax(<n(z + v), n(t_c)> / tau)
// with n(x) = x / |x|. Text rows are normalized once at construction.
// Both zero-shot scoring and the prompt model's forward pass go through
// this class, so a zero offset reproduces zero-shot output bit-for-bit.
class SimilarityClassifier {
 public:
  SimilarityClassifier(const Matrix& text, double temperature,
                       std::span<const float> visual_offset = {});
  // text = base + offsets, row-wise.
  SimilarityClassifier(const Matrix& base_text, const Matrix& text_offsets, double temperature,
                       std::span<const float> visual_offset);

  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t dim() const noexcept { return dim_; }

  std::vector<double> probs(std::span<const float> z) const;
  ClassId predict(std::span<const float> z) const;

 private:
  void init_text(const Matrix& base, const Matrix* offsets);

  std::size_t num_classes_ = 0;
  std::size_t dim_ = 0;
  double inv_temperature_ = 1.0;
  std::vector<double> text_hat_;  // C x d, unit rows
  std::vector<float> offset_;     // empty means zero
};

inline constexpr double kDegenerateNorm = 1e-8;

std::vector<double> zero_shot_probs(std::span<const float> z, const Matrix& text, double temperature);

struct ScoredSample {
  std::size_t index = 0;  // global train index
  std::vector<double> probs;
  ClassId pseudo_label = 0;
  double confidence = 0.0;  // probs[pseudo_label]
  double entropy = 0.0;     // nats
};

// Argmax (lowest class on ties), confidence and entropy of a probability vector.
ScoredSample make_scored_sample(std::size_t index, std::vector<double> probs);

std::vector<ScoredSample> score_view(const SimilarityClassifier& classifier, const TrainView& view);

// Linear interpolation on the sorted values (position q * (n - 1)).
double quantile(std::vector<double> values, double q);

inline constexpr double kQuantileBoundaryEpsilon = 1e-12;

struct FilterOptions {
  double conf_quantile = 0.5;
  double ent_quantile = 0.5;
  bool use_confidence = true;
  bool use_entropy = true;
};

// Keeps samples with confidence > quantile(conf, conf_quantile) and
// entropy < quantile(ent, ent_quantile). Levels 0 and 1 map to min - eps and
// max + eps. Disabled criteria always pass.
std::vector<ScoredSample> filter_estimated_set(std::span<const ScoredSample> scored,
                                               const FilterOptions& options);
std::vector<ScoredSample> filter_estimated_set(std::span<const ScoredSample> scored,
                                               double conf_quantile, double ent_quantile);

struct EstimatedDistribution {
  std::vector<std::uint64_t> counts;  // u_{k,c}

  std::uint64_t total() const noexcept;
  friend bool operator==(const EstimatedDistribution&, const EstimatedDistribution&) = default;
};

EstimatedDistribution estimate_distribution(std::span<const ScoredSample> filtered,
                                            std::size_t num_classes);

struct AllocationPlan {
  std::vector<std::vector<std::uint64_t>> capacities;  // K x C
  std::uint64_t per_class_budget = 0;                  // M
  bool degenerate = false;  // every estimated count was zero

  friend bool operator==(const AllocationPlan&, const AllocationPlan&) = default;
};

// M = max(1, floor(sum_k sum_c u_kc / C)); cap_kc = ceil(u_kc / sum_i u_ic * M).
AllocationPlan allocate_global(std::span<const EstimatedDistribution> distributions);
// Same proportional ceiling split with an explicit per-class budget M.
AllocationPlan allocate_with_budget(std::span<const EstimatedDistribution> distributions,
                                    std::uint64_t per_class_budget);

struct PseudoDataset {
  std::vector<std::pair<std::size_t, ClassId>> pairs;  // (global index, pseudo label)
  std::vector<std::uint64_t> per_class_counts;

  std::size_t size() const noexcept { return pairs.size(); }
  bool empty() const noexcept { return pairs.empty(); }
  friend bool operator==(const PseudoDataset&, const PseudoDataset&) = default;
};

// Per class c, the min(cap_c, available) samples pseudo-labelled c with the
// highest confidence (ascending global index on ties). Pairs are grouped by
// class in ascending class order.
PseudoDataset select_training_set(std::span<const ScoredSample> scored_all,
                                  std::span<const std::uint64_t> capacities);

// Client-local top-k per class by confidence, no server involvement.
PseudoDataset fpl_baseline_select(std::span<const ScoredSample> scored_all,
                                  std::uint64_t per_class_k, std::size_t num_classes);

// Uses every given sample with its pseudo label (no allocation).
PseudoDataset dataset_from_scored(std::span<const ScoredSample> samples, std::size_t num_classes);

void to_json(nlohmann::json& j, const EstimatedDistribution& d);
void from_json(const nlohmann::json& j, EstimatedDistribution& d);
void to_json(nlohmann::json& j, const AllocationPlan& plan);
void from_json(const nlohmann::json& j, AllocationPlan& plan);

}  // namespace fedcopl
