#include <benchmark/benchmark.h>

#include "fedcopl/federation.hpp"
#include "fedcopl/partitioner.hpp"
#include "fedcopl/prompt_model.hpp"
#include "fedcopl/pseudo_labeler.hpp"
#include "fedcopl/rng.hpp"
#include "fedcopl/synthetic.hpp"

namespace fedcopl {
namespace {

const EmbeddingBundle& bundle() {
  static const EmbeddingBundle b = [] {
    SyntheticSpec spec;
    spec.seed = 1;
    return make_synthetic_bundle(spec);
  }();
  return b;
}

void BM_ScoreView(benchmark::State& state) {
  const auto& b = bundle();
  const SimilarityClassifier classifier(b.text_embeddings, kDefaultTemperature);
  const auto view = b.full_train_view();
  for (auto _ : state) benchmark::DoNotOptimize(score_view(classifier, view));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(view.size()));
}
BENCHMARK(BM_ScoreView);

void BM_LossAndGrads(benchmark::State& state) {
  const auto& b = bundle();
  const auto prompt = PromptState::zeros(b.text_embeddings);
  std::vector<BatchItem> batch;
  for (std::size_t i = 0; i < static_cast<std::size_t>(state.range(0)); ++i) {
    batch.push_back({b.train_embeddings.row(i), b.train_labels[i]});
  }
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_grads(prompt, batch, kDefaultTemperature));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LossAndGrads)->Arg(64)->Arg(256);

void BM_AllocateGlobal(benchmark::State& state) {
  Rng rng(2);
  const auto clients = static_cast<std::size_t>(state.range(0));
  std::vector<EstimatedDistribution> d(clients);
  for (auto& e : d) {
    e.counts.resize(100);
    for (auto& c : e.counts) c = rng.below(200);
  }
  for (auto _ : state) benchmark::DoNotOptimize(allocate_global(d));
}
BENCHMARK(BM_AllocateGlobal)->Arg(10)->Arg(100);

void BM_DirichletPartition(benchmark::State& state) {
  const auto& b = bundle();
  PartitionSpec spec;
  spec.num_clients = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(partition(b, spec));
}
BENCHMARK(BM_DirichletPartition)->Arg(10)->Arg(100);

void BM_FederationRound(benchmark::State& state) {
  const auto& b = bundle();
  const auto part = partition(b, PartitionSpec{});
  FederationConfig config;
  config.rounds = 1;
  config.local_epochs = 1;
  for (auto _ : state) benchmark::DoNotOptimize(run(b, part, config));
}
BENCHMARK(BM_FederationRound)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace fedcopl

BENCHMARK_MAIN();
