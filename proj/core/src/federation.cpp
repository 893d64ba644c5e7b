#include "fedcopl/federation.hpp"

#include <algorithm>
#include <numeric>

#include <nlohmann/json.hpp>

#include "fedcopl/parallel.hpp"
#include "fedcopl/rng.hpp"

namespace fedcopl {

namespace {

constexpr const char* kModule = "federation";

// Stream tags for derive_seed.
constexpr std::uint64_t kSamplingStream = 0x5a3e11ULL;
constexpr std::uint64_t kTrainingStream = 0x7a11ULL;

std::vector<float> subtract(std::span<const float> a, std::span<const float> b) {
  std::vector<float> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

bool is_zero(const std::vector<float>& v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return x == 0.0f; });
}

std::optional<double> cosine_or_null(const std::vector<std::vector<float>>& drifts) {
  std::vector<std::vector<float>> nonzero;
  for (const auto& d : drifts) {
    if (!is_zero(d)) nonzero.push_back(d);
  }
  if (nonzero.size() < 2) return std::nullopt;
  return pairwise_cosine_distance(nonzero);
}

class Engine {
 public:
  Engine(const EmbeddingBundle& bundle, const ClientPartition& partition, const FederationConfig& config,
         const RunOptions& options)
      : bundle_(bundle), partition_(partition), config_(config), threads_(std::max<std::size_t>(options.threads, 1)) {
    config_.validate();
    validate_partition(partition_, bundle_.train_size());
    num_clients_ = partition_.num_clients();
    num_classes_ = bundle_.num_classes;
    dim_ = bundle_.dim;

    state_.global_visual.assign(dim_, 0.0f);
    state_.global_text = Matrix(num_classes_, dim_);
    state_.client_states.assign(num_clients_, PromptState::zeros(bundle_.text_embeddings));
    state_.datasets.assign(num_clients_, PseudoDataset{});
    optimizers_.assign(num_clients_, std::nullopt);

    test_shards_ = split_test_set(partition_, bundle_.train_labels, bundle_.test_labels, num_classes_,
                                  config_.seed);
    const SimilarityClassifier zero_shot(bundle_.text_embeddings, config_.temperature);
    zero_shot_accuracy_ = accuracy(zero_shot, bundle_.test_embeddings, bundle_.test_labels);
    zero_shot_local_accuracy_ =
        evaluate_local_accuracy(state_.client_states, state_.global_visual, bundle_, test_shards_,
                                AggregationMode::none, config_.temperature, threads_)
            .mean;
  }

  RunResult run() {
    RunResult result;
    for (std::size_t r = 0; r < config_.rounds; ++r) {
      state_.round = r;
      result.rounds.push_back(run_round(r));
    }
    result.wire = std::move(wire_);
    result.final_state = std::move(state_);
    result.test_shards = std::move(test_shards_);
    return result;
  }

 private:
  void send(std::size_t round, WireDirection dir, const char* kind, std::size_t client, std::uint64_t n) {
    wire_.push_back(WireMessage{round, dir, kind, client, n});
  }

  RoundReport run_round(std::size_t r) {
    const std::size_t wire_begin = wire_.size();
    RoundReport report;
    report.round = r;
    report.zero_shot_accuracy = zero_shot_accuracy_;
    report.zero_shot_local_accuracy = zero_shot_local_accuracy_;

    if (r % config_.refresh_interval == 0) {
      report.refreshed = true;
      report.allocation_degenerate = refresh_labels(r);
    }

    report.participants = sample_participants(r);

    std::size_t selected = 0;
    for (auto k : report.participants) selected += state_.datasets[k].size();
    const bool train = config_.labeling_mode != LabelingMode::zero_shot_only;
    if (train && selected == 0) report.skipped = true;

    if (train && !report.skipped) local_round(r, report);

    const auto local = evaluate_local_accuracy(state_.client_states, state_.global_visual, bundle_,
                                               test_shards_, config_.aggregation_mode,
                                               config_.temperature, threads_);
    report.mean_personalized_accuracy = local.mean;
    report.per_client_accuracy = local.per_client;
    const auto global = evaluate_accuracy(state_.client_states, state_.global_visual, bundle_,
                                          config_.aggregation_mode, config_.temperature, threads_);
    report.mean_global_accuracy = global.mean;
    report.per_client_global_accuracy = global.per_client;
    report.pseudo_label_accuracy = pseudo_label_accuracy(state_.datasets, bundle_.train_labels);
    report.per_class_selected_counts.assign(num_classes_, 0);
    for (const auto& d : state_.datasets) {
      for (std::size_t c = 0; c < num_classes_; ++c) report.per_class_selected_counts[c] += d.per_class_counts[c];
    }
    for (std::size_t i = wire_begin; i < wire_.size(); ++i) {
      report.wire_bytes += wire_[i].bytes();
      report.wire_floats += wire_[i].float_count;
    }
    return report;
  }

  // Re-scores every client's local data with its current model and rebuilds
  // the pseudo-labelled training sets. Returns true if the global allocation
  // was degenerate (previous datasets kept).
  bool refresh_labels(std::size_t r) {
    std::vector<std::vector<ScoredSample>> scored(num_clients_);
    std::vector<std::vector<ScoredSample>> filtered(num_clients_);
    const FilterOptions filter{config_.conf_quantile, config_.ent_quantile, config_.use_conf_filter,
                               config_.use_ent_filter};
    parallel_for(num_clients_, threads_, [&](std::size_t k) {
      const auto& s = state_.client_states[k];
      const auto classifier = s.classifier(config_.temperature);
      scored[k] = score_view(classifier, bundle_.train_view(partition_.assignments[k]));
      filtered[k] = (filter.use_confidence || filter.use_entropy) ? filter_estimated_set(scored[k], filter)
                                                                  : scored[k];
    });
    std::vector<EstimatedDistribution> estimates(num_clients_);
    for (std::size_t k = 0; k < num_clients_; ++k) {
      estimates[k] = estimate_distribution(filtered[k], num_classes_);
    }

    std::vector<PseudoDataset> next(num_clients_);
    bool degenerate = false;
    const bool global = config_.labeling_mode != LabelingMode::fpl_baseline && config_.use_global_alloc;
    if (config_.labeling_mode == LabelingMode::fpl_baseline) {
      for (std::size_t k = 0; k < num_clients_; ++k) {
        std::uint64_t per_class = config_.fpl_per_class;
        if (per_class == 0) per_class = std::max<std::uint64_t>(1, estimates[k].total() / num_classes_);
        next[k] = fpl_baseline_select(scored[k], per_class, num_classes_);
      }
    } else if (global) {
      for (std::size_t k = 0; k < num_clients_; ++k) {
        send(r, WireDirection::up, "estimated_distribution", k, num_classes_);
      }
      const auto plan = allocate_global(estimates);
      for (std::size_t k = 0; k < num_clients_; ++k) send(r, WireDirection::down, "allocation", k, num_classes_);
      if (plan.degenerate) {
        degenerate = true;
      } else {
        for (std::size_t k = 0; k < num_clients_; ++k) next[k] = select_training_set(scored[k], plan.capacities[k]);
      }
    } else {
      for (std::size_t k = 0; k < num_clients_; ++k) next[k] = dataset_from_scored(filtered[k], num_classes_);
    }

    if (degenerate) {
      // Keep the previous sets; a first-round degenerate plan leaves them empty.
      for (auto& d : state_.datasets) {
        if (d.per_class_counts.empty()) d.per_class_counts.assign(num_classes_, 0);
      }
      return true;
    }
    state_.datasets = std::move(next);
    for (std::size_t k = 0; k < num_clients_; ++k) reset_schedule(k);
    return false;
  }

  void reset_schedule(std::size_t k) {
    const std::size_t n = state_.datasets[k].size();
    const std::uint64_t batches = (n + config_.batch_size - 1) / config_.batch_size;
    const std::uint64_t total = std::max<std::uint64_t>(1, config_.local_epochs * batches * config_.rounds);
    auto& opt = optimizers_[k];
    if (!opt) {
      opt = OptimizerState::for_state(state_.client_states[k], config_.lr0, config_.momentum, total);
    } else {
      opt->total_steps = total;
    }
  }

  std::vector<std::size_t> sample_participants(std::size_t r) const {
    const std::size_t m = config_.participants_per_round(num_clients_);
    std::vector<std::size_t> ids(num_clients_);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    if (m < num_clients_) {
      Rng rng(derive_seed(config_.seed, kSamplingStream, r));
      rng.shuffle(ids);
      ids.resize(m);
      std::sort(ids.begin(), ids.end());
    }
    return ids;
  }

  std::optional<double> train_client(std::size_t r, std::size_t k) {
    auto& s = state_.client_states[k];
    auto& opt = *optimizers_[k];
    const auto& data = state_.datasets[k];
    if (data.empty()) return std::nullopt;
    Rng rng(derive_seed(config_.seed, kTrainingStream, r, k));
    opt.reset_velocity();
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<BatchItem> batch;
    batch.reserve(config_.batch_size);
    double loss = 0.0;
    std::size_t steps = 0;
    for (std::size_t e = 0; e < config_.local_epochs; ++e) {
      rng.shuffle(order);
      for (std::size_t begin = 0; begin < order.size(); begin += config_.batch_size) {
        const std::size_t end = std::min(order.size(), begin + config_.batch_size);
        batch.clear();
        for (std::size_t i = begin; i < end; ++i) {
          const auto& [index, label] = data.pairs[order[i]];
          batch.push_back(BatchItem{bundle_.train_embeddings.row(index), label});
        }
        const auto lg = loss_and_grads(s, batch, config_.temperature);
        sgd_step(s, opt, lg.grads);
        loss += lg.loss;
        ++steps;
      }
    }
    return loss / static_cast<double>(steps);
  }

  void local_round(std::size_t r, RoundReport& report) {
    const auto& participants = report.participants;
    const auto mode = config_.aggregation_mode;

    std::vector<std::vector<float>> start_visual;
    std::vector<std::vector<float>> start_text;
    for (auto k : participants) {
      auto& s = state_.client_states[k];
      if (shares_visual(mode)) {
        send(r, WireDirection::down, "global_visual", k, dim_);
        s.visual = state_.global_visual;
      }
      if (shares_text(mode)) {
        send(r, WireDirection::down, "global_text", k, num_classes_ * dim_);
        s.text = state_.global_text;
      }
      start_visual.push_back(s.visual);
      start_text.push_back(s.text.values());
    }

    std::vector<std::optional<double>> losses(participants.size());
    parallel_for(participants.size(), threads_,
                 [&](std::size_t i) { losses[i] = train_client(r, participants[i]); });

    std::vector<std::vector<float>> drift_visual;
    std::vector<std::vector<float>> drift_text;
    double loss_total = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t i = 0; i < participants.size(); ++i) {
      const auto& s = state_.client_states[participants[i]];
      drift_visual.push_back(subtract(s.visual, start_visual[i]));
      drift_text.push_back(subtract(s.text.flat(), start_text[i]));
      if (losses[i]) {
        loss_total += *losses[i];
        ++loss_count;
      }
    }
    if (loss_count > 0) report.mean_train_loss = loss_total / static_cast<double>(loss_count);
    report.drift_diversity_visual = drift_diversity(drift_visual);
    report.drift_diversity_text = drift_diversity(drift_text);
    report.mean_pairwise_cosine_distance_visual = cosine_or_null(drift_visual);
    report.mean_pairwise_cosine_distance_text = cosine_or_null(drift_text);

    if (mode == AggregationMode::none) return;

    std::vector<ClientUpload> uploads;
    for (auto k : participants) {
      const auto& s = state_.client_states[k];
      if (shares_visual(mode)) send(r, WireDirection::up, "visual_params", k, dim_);
      if (shares_text(mode)) send(r, WireDirection::up, "text_params", k, num_classes_ * dim_);
      send(r, WireDirection::up, "sample_count", k, 1);
      uploads.push_back(ClientUpload{s.visual, &s.text, static_cast<double>(state_.datasets[k].size())});
    }
    auto aggregated = aggregate(uploads, mode);
    if (aggregated.visual) {
      state_.global_visual = std::move(*aggregated.visual);
      for (auto k : participants) state_.client_states[k].visual = state_.global_visual;
    }
    if (aggregated.text) {
      state_.global_text = std::move(*aggregated.text);
      for (auto k : participants) state_.client_states[k].text = state_.global_text;
    }
  }

  const EmbeddingBundle& bundle_;
  const ClientPartition& partition_;
  FederationConfig config_;
  std::size_t threads_;
  std::size_t num_clients_ = 0;
  std::size_t num_classes_ = 0;
  std::size_t dim_ = 0;
  ClientPartition test_shards_;
  double zero_shot_accuracy_ = 0.0;
  double zero_shot_local_accuracy_ = 0.0;
  GlobalState state_;
  std::vector<std::optional<OptimizerState>> optimizers_;
  std::vector<WireMessage> wire_;
};

}  // namespace

void to_json(nlohmann::json& j, const WireMessage& m) {
  j = {{"round", m.round},
       {"direction", m.direction == WireDirection::up ? "up" : "down"},
       {"payload_kind", m.payload_kind},
       {"client", m.client},
       {"float_count", m.float_count}};
}

std::vector<float> weighted_average(std::span<const std::span<const float>> params,
                                    std::span<const double> weights) {
  if (params.empty() || params.size() != weights.size()) {
    throw ValidationError(kModule, "weighted average needs one weight per parameter vector");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ValidationError(kModule, "aggregation weights must be non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw Error(kModule, "all aggregation weights are zero");
  const std::size_t dim = params.front().size();
  std::vector<double> acc(dim, 0.0);
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].size() != dim) throw ValidationError(kModule, "parameter dimension mismatch");
    const double w = weights[k] / total;
    for (std::size_t i = 0; i < dim; ++i) acc[i] += w * static_cast<double>(params[k][i]);
  }
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(acc[i]);
  return out;
}

AggregatedParams aggregate(std::span<const ClientUpload> uploads, AggregationMode mode) {
  if (uploads.empty()) throw ValidationError(kModule, "nothing to aggregate");
  std::vector<double> weights;
  for (const auto& u : uploads) weights.push_back(u.weight);
  AggregatedParams out;
  if (shares_visual(mode)) {
    std::vector<std::span<const float>> params;
    for (const auto& u : uploads) params.push_back(u.visual);
    out.visual = weighted_average(params, weights);
  }
  if (shares_text(mode)) {
    std::vector<std::span<const float>> params;
    for (const auto& u : uploads) {
      if (!u.text) throw ValidationError(kModule, "text aggregation without text parameters");
      params.push_back(u.text->flat());
    }
    const auto& shape = *uploads.front().text;
    out.text = Matrix(shape.rows(), shape.cols(), weighted_average(params, weights));
  }
  return out;
}

RunResult run(const EmbeddingBundle& bundle, const ClientPartition& partition,
              const FederationConfig& config, const RunOptions& options) {
  return Engine(bundle, partition, config, options).run();
}

}  // namespace fedcopl
