#include "fedcopl/synthetic.hpp"

#include <cmath>

#include "fedcopl/rng.hpp"

namespace fedcopl {

namespace {

std::vector<double> random_unit(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double sq = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    sq += x * x;
  }
  const double n = std::sqrt(sq);
  for (auto& x : v) x /= n;
  return v;
}

// Gram-Schmidt on random draws; needs count <= dim.
std::vector<std::vector<double>> random_orthonormal(Rng& rng, std::size_t count, std::size_t dim) {
  std::vector<std::vector<double>> basis;
  while (basis.size() < count) {
    auto v = random_unit(rng, dim);
    for (const auto& b : basis) {
      double d = 0.0;
      for (std::size_t j = 0; j < dim; ++j) d += v[j] * b[j];
      for (std::size_t j = 0; j < dim; ++j) v[j] -= d * b[j];
    }
    double sq = 0.0;
    for (double x : v) sq += x * x;
    if (sq < 1e-6) continue;
    const double n = std::sqrt(sq);
    for (auto& x : v) x /= n;
    basis.push_back(std::move(v));
  }
  return basis;
}

void store_normalized(std::span<float> row, const std::vector<double>& v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double n = std::sqrt(sq);
  for (std::size_t i = 0; i < v.size(); ++i) row[i] = static_cast<float>(v[i] / n);
}

void fill_split(Rng& rng, const SyntheticSpec& spec, const std::vector<std::vector<double>>& prototypes,
                const std::vector<double>& gap, std::size_t per_class, Matrix& out,
                std::vector<ClassId>& labels) {
  const std::size_t n = per_class * spec.num_classes;
  out = Matrix(n, spec.dim);
  labels.resize(n);
  std::vector<double> v(spec.dim);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<ClassId>(i % spec.num_classes);
    for (std::size_t j = 0; j < spec.dim; ++j) {
      v[j] = prototypes[c][j] + gap[j] + spec.cluster_noise * rng.normal();
    }
    store_normalized(out.row(i), v);
    labels[i] = c;
  }
}

}  // namespace

EmbeddingBundle make_synthetic_bundle(const SyntheticSpec& spec) {
  if (spec.num_classes == 0 || spec.dim == 0 || spec.train_per_class == 0 || spec.test_per_class == 0) {
    throw ValidationError("synthetic", "all sizes must be positive");
  }
  if (spec.num_classes + 2 > spec.dim) {
    throw ValidationError("synthetic", "dim must be at least num_classes + 2");
  }
  Rng rng(derive_seed(spec.seed, 0x5e17ULL));
  auto prototypes = random_orthonormal(rng, spec.num_classes + 2, spec.dim);
  auto text_gap = std::move(prototypes.back());
  prototypes.pop_back();
  auto gap = std::move(prototypes.back());
  prototypes.pop_back();
  for (auto& x : gap) x *= spec.image_gap;
  for (auto& x : text_gap) x *= spec.text_gap;

  EmbeddingBundle b;
  b.name = spec.name;
  b.dim = spec.dim;
  b.num_classes = spec.num_classes;
  for (std::size_t c = 0; c < spec.num_classes; ++c) b.class_names.push_back("class_" + std::to_string(c));
  // Confusers follow one random cycle over the classes.
  std::vector<std::size_t> order(spec.num_classes);
  for (std::size_t c = 0; c < order.size(); ++c) order[c] = c;
  rng.shuffle(order);
  std::vector<std::size_t> confuser(spec.num_classes);
  for (std::size_t i = 0; i < order.size(); ++i) confuser[order[i]] = order[(i + 1) % order.size()];

  b.text_embeddings = Matrix(spec.num_classes, spec.dim);
  const double a = spec.text_confusion;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    const auto u = random_unit(rng, spec.dim);
    const auto& other = prototypes[confuser[c]];
    std::vector<double> t(spec.dim);
    for (std::size_t j = 0; j < spec.dim; ++j) {
      t[j] = text_gap[j] + (1.0 - a) * prototypes[c][j] + a * other[j] + spec.text_noise * u[j];
    }
    store_normalized(b.text_embeddings.row(c), t);
  }
  fill_split(rng, spec, prototypes, gap, spec.train_per_class, b.train_embeddings, b.train_labels);
  fill_split(rng, spec, prototypes, gap, spec.test_per_class, b.test_embeddings, b.test_labels);
  b.normalization = "l2";
  b.validate();
  return b;
}

}  // namespace fedcopl
