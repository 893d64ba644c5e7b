#include "fedcopl/partitioner.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "fedcopl/rng.hpp"

namespace fedcopl {

namespace {

constexpr const char* kModule = "partitioner";

std::vector<std::vector<std::size_t>> indices_by_class(std::span<const ClassId> labels,
                                                       std::size_t num_classes) {
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) throw ValidationError(kModule, "label out of range");
    by_class[labels[i]].push_back(i);
  }
  return by_class;
}

void canonicalize(ClientPartition& p) {
  for (auto& list : p.assignments) std::sort(list.begin(), list.end());
}

}  // namespace

const char* to_string(PartitionKind kind) {
  return kind == PartitionKind::dirichlet ? "dirichlet" : "quantity";
}

PartitionKind partition_kind_from_string(const std::string& name) {
  if (name == "dirichlet") return PartitionKind::dirichlet;
  if (name == "quantity") return PartitionKind::quantity;
  throw ValidationError(kModule, "unknown partition kind '" + name + "'");
}

void PartitionSpec::validate(std::size_t num_classes) const {
  if (num_clients < 1) throw ValidationError(kModule, "num_clients must be >= 1");
  if (kind == PartitionKind::dirichlet) {
    if (!(beta > 0.0) || !std::isfinite(beta)) {
      throw ValidationError(kModule, "beta must be a positive finite number");
    }
  } else {
    if (classes_per_client < 1 || classes_per_client > num_classes) {
      throw ValidationError(kModule, "classes_per_client must lie in [1, num_classes]");
    }
    if (num_clients * classes_per_client < num_classes) {
      throw ValidationError(kModule, "num_clients * classes_per_client < num_classes: " +
                                         std::to_string(num_clients) + " * " +
                                         std::to_string(classes_per_client) + " < " +
                                         std::to_string(num_classes));
    }
  }
}

std::size_t ClientPartition::total_size() const noexcept {
  std::size_t n = 0;
  for (const auto& a : assignments) n += a.size();
  return n;
}

void repair_empty_clients(ClientPartition& p) {
  for (;;) {
    auto empty = std::find_if(p.assignments.begin(), p.assignments.end(),
                              [](const auto& a) { return a.empty(); });
    if (empty == p.assignments.end()) return;
    auto largest = std::max_element(
        p.assignments.begin(), p.assignments.end(),
        [](const auto& a, const auto& b) { return a.size() < b.size(); });
    if (largest->size() < 2) throw ValidationError(kModule, "not enough samples to fill every client");
    empty->push_back(largest->back());
    largest->pop_back();
  }
}

ClientPartition partition_dirichlet(std::span<const ClassId> labels, std::size_t num_classes,
                                    const PartitionSpec& spec) {
  spec.validate(num_classes);
  const std::size_t k_clients = spec.num_clients;
  if (k_clients > labels.size()) {
    throw ValidationError(kModule, "more clients (" + std::to_string(k_clients) +
                                       ") than training samples (" +
                                       std::to_string(labels.size()) + ")");
  }
  Rng rng(derive_seed(spec.seed, 0xd1c1e7ULL));
  ClientPartition p;
  p.assignments.resize(k_clients);
  auto by_class = indices_by_class(labels, num_classes);
  for (auto& members : by_class) {
    rng.shuffle(members);
    const auto proportions = rng.dirichlet(spec.beta, k_clients);
    const auto n = members.size();
    double cumulative = 0.0;
    std::size_t begin = 0;
    for (std::size_t k = 0; k < k_clients; ++k) {
      cumulative += proportions[k];
      std::size_t end = k + 1 == k_clients
                            ? n
                            : std::min(n, static_cast<std::size_t>(std::floor(cumulative * n)));
      end = std::max(end, begin);
      p.assignments[k].insert(p.assignments[k].end(), members.begin() + static_cast<std::ptrdiff_t>(begin),
                              members.begin() + static_cast<std::ptrdiff_t>(end));
      begin = end;
    }
  }
  canonicalize(p);
  repair_empty_clients(p);
  canonicalize(p);
  return p;
}

ClientPartition partition_quantity(std::span<const ClassId> labels, std::size_t num_classes,
                                   const PartitionSpec& spec) {
  spec.validate(num_classes);
  const std::size_t k_clients = spec.num_clients;
  const std::size_t s = spec.classes_per_client;
  if (k_clients > labels.size()) {
    throw ValidationError(kModule, "more clients than training samples");
  }
  Rng rng(derive_seed(spec.seed, 0x9a4714ULL));

  std::vector<ClassId> class_order(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) class_order[c] = static_cast<ClassId>(c);
  rng.shuffle(class_order);

  // holders[c] lists clients holding class c in ascending client id.
  std::vector<std::vector<std::size_t>> holders(num_classes);
  for (std::size_t k = 0; k < k_clients; ++k) {
    for (std::size_t j = 0; j < s; ++j) {
      holders[class_order[(k * s + j) % num_classes]].push_back(k);
    }
  }

  ClientPartition p;
  p.assignments.resize(k_clients);
  auto by_class = indices_by_class(labels, num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& members = by_class[c];
    rng.shuffle(members);
    const auto& hs = holders[c];
    const std::size_t base = members.size() / hs.size();
    const std::size_t extra = members.size() % hs.size();
    std::size_t cursor = 0;
    for (std::size_t h = 0; h < hs.size(); ++h) {
      const std::size_t take = base + (h < extra ? 1 : 0);
      auto& dst = p.assignments[hs[h]];
      dst.insert(dst.end(), members.begin() + static_cast<std::ptrdiff_t>(cursor),
                 members.begin() + static_cast<std::ptrdiff_t>(cursor + take));
      cursor += take;
    }
  }
  canonicalize(p);
  repair_empty_clients(p);
  canonicalize(p);
  return p;
}

ClientPartition partition(const EmbeddingBundle& bundle, const PartitionSpec& spec) {
  return spec.kind == PartitionKind::dirichlet
             ? partition_dirichlet(bundle.train_labels, bundle.num_classes, spec)
             : partition_quantity(bundle.train_labels, bundle.num_classes, spec);
}

ClientPartition split_test_set(const ClientPartition& train, std::span<const ClassId> train_labels,
                               std::span<const ClassId> test_labels, std::size_t num_classes,
                               std::uint64_t seed) {
  const std::size_t k_clients = train.num_clients();
  if (k_clients == 0) throw ValidationError(kModule, "partition has no clients");
  if (k_clients > test_labels.size()) {
    throw ValidationError(kModule, "more clients than test samples");
  }
  const auto hist = class_histogram(train, train_labels, num_classes);
  auto by_class = indices_by_class(test_labels, num_classes);
  ClientPartition p;
  p.assignments.resize(k_clients);
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& members = by_class[c];
    std::uint64_t held = 0;
    for (std::size_t k = 0; k < k_clients; ++k) held += hist[k][c];
    if (held == 0 || members.empty()) continue;
    Rng rng(derive_seed(seed, 0x7e57ULL, c));
    rng.shuffle(members);
    // Cut after client k at floor(n * cumulative_k / held), exact in integers.
    const std::uint64_t n = members.size();
    std::uint64_t cumulative = 0;
    std::size_t cursor = 0;
    for (std::size_t k = 0; k < k_clients; ++k) {
      cumulative += hist[k][c];
      const auto end = static_cast<std::size_t>(n * cumulative / held);
      auto& dst = p.assignments[k];
      dst.insert(dst.end(), members.begin() + static_cast<std::ptrdiff_t>(cursor),
                 members.begin() + static_cast<std::ptrdiff_t>(end));
      cursor = end;
    }
  }
  canonicalize(p);
  repair_empty_clients(p);
  canonicalize(p);
  return p;
}

std::vector<std::vector<std::size_t>> class_histogram(const ClientPartition& partition,
                                                      std::span<const ClassId> labels,
                                                      std::size_t num_classes) {
  std::vector<std::vector<std::size_t>> hist(partition.num_clients(),
                                             std::vector<std::size_t>(num_classes, 0));
  for (std::size_t k = 0; k < partition.num_clients(); ++k) {
    for (auto i : partition.assignments[k]) ++hist[k][labels[i]];
  }
  return hist;
}

void validate_partition(const ClientPartition& partition, std::size_t train_size) {
  if (partition.num_clients() == 0) throw ValidationError(kModule, "partition has no clients");
  std::vector<bool> seen(train_size, false);
  for (std::size_t k = 0; k < partition.num_clients(); ++k) {
    if (partition.assignments[k].empty()) {
      throw ValidationError(kModule, "client " + std::to_string(k) + " is empty");
    }
    for (auto i : partition.assignments[k]) {
      if (i >= train_size) throw ValidationError(kModule, "index " + std::to_string(i) + " out of range");
      if (seen[i]) throw ValidationError(kModule, "index " + std::to_string(i) + " assigned twice");
      seen[i] = true;
    }
  }
}

void to_json(nlohmann::json& j, const PartitionSpec& spec) {
  j = {{"kind", to_string(spec.kind)},
       {"beta", spec.beta},
       {"classes_per_client", spec.classes_per_client},
       {"num_clients", spec.num_clients},
       {"seed", spec.seed}};
}

void from_json(const nlohmann::json& j, PartitionSpec& spec) {
  spec.kind = partition_kind_from_string(j.value("kind", std::string(to_string(spec.kind))));
  spec.beta = j.value("beta", spec.beta);
  spec.classes_per_client = j.value("classes_per_client", spec.classes_per_client);
  spec.num_clients = j.value("num_clients", spec.num_clients);
  spec.seed = j.value("seed", spec.seed);
}

void to_json(nlohmann::json& j, const ClientPartition& partition) {
  j = {{"num_clients", partition.num_clients()}, {"assignments", partition.assignments}};
}

void from_json(const nlohmann::json& j, ClientPartition& partition) {
  partition.assignments = j.at("assignments").get<std::vector<std::vector<std::size_t>>>();
}

}  // namespace fedcopl
