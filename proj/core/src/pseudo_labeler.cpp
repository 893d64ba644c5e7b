#include "fedcopl/pseudo_labeler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

namespace fedcopl {

namespace {

constexpr const char* kModule = "pseudo-labeler";

bool confidence_order(const ScoredSample& a, const ScoredSample& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  return a.index < b.index;
}

double threshold_at(const std::vector<double>& values, double q) {
  if (q <= 0.0) {
    return *std::min_element(values.begin(), values.end()) - kQuantileBoundaryEpsilon;
  }
  if (q >= 1.0) {
    return *std::max_element(values.begin(), values.end()) + kQuantileBoundaryEpsilon;
  }
  return quantile(values, q);
}

std::uint64_t ceil_div(std::uint64_t num, std::uint64_t den) { return (num + den - 1) / den; }

}  // namespace

SimilarityClassifier::SimilarityClassifier(const Matrix& text, double temperature,
                                           std::span<const float> visual_offset)
    : offset_(visual_offset.begin(), visual_offset.end()) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ValidationError(kModule, "temperature must be positive and finite");
  }
  inv_temperature_ = 1.0 / temperature;
  init_text(text, nullptr);
}

SimilarityClassifier::SimilarityClassifier(const Matrix& base_text, const Matrix& text_offsets,
                                           double temperature,
                                           std::span<const float> visual_offset)
    : offset_(visual_offset.begin(), visual_offset.end()) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ValidationError(kModule, "temperature must be positive and finite");
  }
  if (text_offsets.rows() != base_text.rows() || text_offsets.cols() != base_text.cols()) {
    throw ValidationError(kModule, "text offsets shape mismatch");
  }
  inv_temperature_ = 1.0 / temperature;
  init_text(base_text, &text_offsets);
}

void SimilarityClassifier::init_text(const Matrix& base, const Matrix* offsets) {
  num_classes_ = base.rows();
  dim_ = base.cols();
  if (num_classes_ == 0 || dim_ == 0) throw ValidationError(kModule, "empty text embedding matrix");
  if (!offset_.empty() && offset_.size() != dim_) {
    throw ValidationError(kModule, "visual offset dimension mismatch");
  }
  text_hat_.assign(num_classes_ * dim_, 0.0);
  for (std::size_t c = 0; c < num_classes_; ++c) {
    double* row = text_hat_.data() + c * dim_;
    double sq = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) {
      row[i] = static_cast<double>(base(c, i)) +
               (offsets ? static_cast<double>((*offsets)(c, i)) : 0.0);
      sq += row[i] * row[i];
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw Error(kModule, "non-finite text embedding");
    if (norm < kDegenerateNorm) throw Error(kModule, "degenerate text normalization");
    for (std::size_t i = 0; i < dim_; ++i) row[i] /= norm;
  }
}

std::vector<double> SimilarityClassifier::probs(std::span<const float> z) const {
  if (z.size() != dim_) throw ValidationError(kModule, "embedding dimension mismatch");
  std::vector<double> a(dim_);
  double sq = 0.0;
  for (std::size_t i = 0; i < dim_; ++i) {
    a[i] = static_cast<double>(z[i]) + (offset_.empty() ? 0.0 : static_cast<double>(offset_[i]));
    sq += a[i] * a[i];
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw Error(kModule, "non-finite embedding");
  if (norm < kDegenerateNorm) throw Error(kModule, "degenerate visual normalization");

  std::vector<double> logits(num_classes_);
  for (std::size_t c = 0; c < num_classes_; ++c) {
    const double* t = text_hat_.data() + c * dim_;
    double s = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) s += a[i] * t[i];
    logits[c] = s / norm * inv_temperature_;
  }
  const double max_logit = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (auto& l : logits) {
    l = std::exp(l - max_logit);
    total += l;
  }
  std::vector<double> out(num_classes_);
  for (std::size_t c = 0; c < num_classes_; ++c) out[c] = logits[c] / total;
  return out;
}

ClassId SimilarityClassifier::predict(std::span<const float> z) const {
  const auto p = probs(z);
  return static_cast<ClassId>(std::max_element(p.begin(), p.end()) - p.begin());
}

std::vector<double> zero_shot_probs(std::span<const float> z, const Matrix& text, double temperature) {
  return SimilarityClassifier(text, temperature).probs(z);
}

ScoredSample make_scored_sample(std::size_t index, std::vector<double> probs) {
  ScoredSample s;
  s.index = index;
  const auto best = std::max_element(probs.begin(), probs.end());
  s.pseudo_label = static_cast<ClassId>(best - probs.begin());
  s.confidence = *best;
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  s.entropy = std::clamp(h, 0.0, std::log(static_cast<double>(probs.size())));
  s.probs = std::move(probs);
  return s;
}

std::vector<ScoredSample> score_view(const SimilarityClassifier& classifier, const TrainView& view) {
  std::vector<ScoredSample> out;
  out.reserve(view.size());
  for (std::size_t i = 0; i < view.size(); ++i) {
    out.push_back(make_scored_sample(view.indices()[i], classifier.probs(view.at(i))));
  }
  return out;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError(kModule, "quantile of empty set");
  if (!(q >= 0.0 && q <= 1.0)) throw ValidationError(kModule, "quantile level outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::vector<ScoredSample> filter_estimated_set(std::span<const ScoredSample> scored,
                                               const FilterOptions& options) {
  if (scored.empty()) throw ValidationError(kModule, "cannot filter an empty scored set");
  std::vector<double> conf(scored.size());
  std::vector<double> ent(scored.size());
  for (std::size_t i = 0; i < scored.size(); ++i) {
    conf[i] = scored[i].confidence;
    ent[i] = scored[i].entropy;
  }
  const double conf_threshold = options.use_confidence ? threshold_at(conf, options.conf_quantile) : 0.0;
  const double ent_threshold = options.use_entropy ? threshold_at(ent, options.ent_quantile) : 0.0;

  std::vector<ScoredSample> kept;
  for (const auto& s : scored) {
    const bool conf_ok = !options.use_confidence || s.confidence > conf_threshold;
    const bool ent_ok = !options.use_entropy || s.entropy < ent_threshold;
    if (conf_ok && ent_ok) kept.push_back(s);
  }
  return kept;
}

std::vector<ScoredSample> filter_estimated_set(std::span<const ScoredSample> scored,
                                               double conf_quantile, double ent_quantile) {
  return filter_estimated_set(scored, FilterOptions{conf_quantile, ent_quantile, true, true});
}

std::uint64_t EstimatedDistribution::total() const noexcept {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

EstimatedDistribution estimate_distribution(std::span<const ScoredSample> filtered,
                                            std::size_t num_classes) {
  EstimatedDistribution d;
  d.counts.assign(num_classes, 0);
  for (const auto& s : filtered) {
    if (s.pseudo_label >= num_classes) throw ValidationError(kModule, "pseudo label out of range");
    ++d.counts[s.pseudo_label];
  }
  return d;
}

AllocationPlan allocate_with_budget(std::span<const EstimatedDistribution> distributions,
                                    std::uint64_t per_class_budget) {
  if (distributions.empty()) throw ValidationError(kModule, "allocation needs at least one client");
  const std::size_t num_classes = distributions.front().counts.size();
  if (num_classes == 0) throw ValidationError(kModule, "allocation needs at least one class");
  for (const auto& d : distributions) {
    if (d.counts.size() != num_classes) throw ValidationError(kModule, "distribution length mismatch");
  }

  AllocationPlan plan;
  plan.per_class_budget = per_class_budget;
  plan.capacities.assign(distributions.size(), std::vector<std::uint64_t>(num_classes, 0));
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::uint64_t class_total = 0;
    for (const auto& d : distributions) class_total += d.counts[c];
    if (class_total == 0) continue;
    for (std::size_t k = 0; k < distributions.size(); ++k) {
      plan.capacities[k][c] = ceil_div(distributions[k].counts[c] * per_class_budget, class_total);
    }
  }
  return plan;
}

AllocationPlan allocate_global(std::span<const EstimatedDistribution> distributions) {
  if (distributions.empty()) throw ValidationError(kModule, "allocation needs at least one client");
  const std::size_t num_classes = distributions.front().counts.size();
  std::uint64_t grand_total = 0;
  for (const auto& d : distributions) grand_total += d.total();
  const std::uint64_t budget = std::max<std::uint64_t>(1, grand_total / num_classes);
  auto plan = allocate_with_budget(distributions, budget);
  plan.degenerate = grand_total == 0;  // every capacity is zero
  return plan;
}

PseudoDataset select_training_set(std::span<const ScoredSample> scored_all,
                                  std::span<const std::uint64_t> capacities) {
  const std::size_t num_classes = capacities.size();
  std::vector<std::vector<const ScoredSample*>> candidates(num_classes);
  for (const auto& s : scored_all) {
    if (s.pseudo_label < num_classes) candidates[s.pseudo_label].push_back(&s);
  }
  PseudoDataset out;
  out.per_class_counts.assign(num_classes, 0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& list = candidates[c];
    const auto take = static_cast<std::size_t>(std::min<std::uint64_t>(capacities[c], list.size()));
    if (take == 0) continue;
    std::partial_sort(list.begin(), list.begin() + static_cast<std::ptrdiff_t>(take), list.end(),
                      [](const ScoredSample* a, const ScoredSample* b) { return confidence_order(*a, *b); });
    for (std::size_t i = 0; i < take; ++i) out.pairs.emplace_back(list[i]->index, static_cast<ClassId>(c));
    out.per_class_counts[c] = take;
  }
  return out;
}

PseudoDataset fpl_baseline_select(std::span<const ScoredSample> scored_all,
                                  std::uint64_t per_class_k, std::size_t num_classes) {
  if (per_class_k < 1) throw ValidationError(kModule, "per_class_k must be >= 1");
  // Single pass over the samples sorted by confidence; each class fills up
  // to per_class_k slots.
  std::vector<const ScoredSample*> order;
  order.reserve(scored_all.size());
  for (const auto& s : scored_all) order.push_back(&s);
  std::stable_sort(order.begin(), order.end(),
                   [](const ScoredSample* a, const ScoredSample* b) { return confidence_order(*a, *b); });

  std::vector<std::vector<std::size_t>> picked(num_classes);
  for (const auto* s : order) {
    if (s->pseudo_label >= num_classes) continue;
    auto& bucket = picked[s->pseudo_label];
    if (bucket.size() < per_class_k) bucket.push_back(s->index);
  }
  PseudoDataset out;
  out.per_class_counts.assign(num_classes, 0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (auto idx : picked[c]) out.pairs.emplace_back(idx, static_cast<ClassId>(c));
    out.per_class_counts[c] = picked[c].size();
  }
  return out;
}

PseudoDataset dataset_from_scored(std::span<const ScoredSample> samples, std::size_t num_classes) {
  std::vector<std::uint64_t> all(num_classes, std::numeric_limits<std::uint64_t>::max());
  return select_training_set(samples, all);
}

void to_json(nlohmann::json& j, const EstimatedDistribution& d) { j = {{"counts", d.counts}}; }

void from_json(const nlohmann::json& j, EstimatedDistribution& d) {
  d.counts = j.at("counts").get<std::vector<std::uint64_t>>();
}

void to_json(nlohmann::json& j, const AllocationPlan& plan) {
  j = {{"capacities", plan.capacities},
       {"per_class_budget", plan.per_class_budget},
       {"degenerate", plan.degenerate}};
}

void from_json(const nlohmann::json& j, AllocationPlan& plan) {
  plan.capacities = j.at("capacities").get<std::vector<std::vector<std::uint64_t>>>();
  plan.per_class_budget = j.at("per_class_budget").get<std::uint64_t>();
  plan.degenerate = j.value("degenerate", false);
}

}  // namespace fedcopl
