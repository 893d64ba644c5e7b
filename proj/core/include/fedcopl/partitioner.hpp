#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fedcopl/embedding_store.hpp"

namespace fedcopl {

enum class PartitionKind { dirichlet, quantity };

struct PartitionSpec {
  PartitionKind kind = PartitionKind::dirichlet;
  double beta = 0.1;                   // Dirichlet concentration
  std::size_t classes_per_client = 2;  // quantity skew: classes held per client
  std::size_t num_clients = 10;
  std::uint64_t seed = 0;

  // Checks these settings against a label space of `num_classes` classes.
  void validate(std::size_t num_classes) const;
};

// One list of global train indices per client. Lists are sorted ascending,
// pairwise disjoint and non-empty.
struct ClientPartition {
  std::vector<std::vector<std::size_t>> assignments;

  std::size_t num_clients() const noexcept { return assignments.size(); }
  std::size_t total_size() const noexcept;
  friend bool operator==(const ClientPartition&, const ClientPartition&) = default;
};

// Per-class Dir(beta * 1_K) proportions over clients; each class's shuffled
// indices are cut contiguously at the cumulative proportions.
ClientPartition partition_dirichlet(std::span<const ClassId> labels, std::size_t num_classes,
                                    const PartitionSpec& spec);
// s classes per client by round-robin over a shuffled class list; each
// class divided evenly among its holders, remainder to the earliest.
ClientPartition partition_quantity(std::span<const ClassId> labels, std::size_t num_classes,
                                   const PartitionSpec& spec);

ClientPartition partition(const EmbeddingBundle& bundle, const PartitionSpec& spec);

// Per-client test shards: each class's shuffled test indices are cut in
// proportion to the clients' train counts of that class, so every shard
// follows its client's label distribution. Classes no client holds are left
// out. Empty shards are repaired like empty train clients.
ClientPartition split_test_set(const ClientPartition& train, std::span<const ClassId> train_labels,
                               std::span<const ClassId> test_labels, std::size_t num_classes,
                               std::uint64_t seed);

// Moves one sample from the largest client (lowest id on ties) into each
// empty client until none is empty.
void repair_empty_clients(ClientPartition& partition);

// counts[k][c] = number of samples of class c held by client k.
std::vector<std::vector<std::size_t>> class_histogram(const ClientPartition& partition,
                                                      std::span<const ClassId> labels,
                                                      std::size_t num_classes);

// Throws unless the partition is disjoint, in range, and has no empty client.
void validate_partition(const ClientPartition& partition, std::size_t train_size);

const char* to_string(PartitionKind kind);
PartitionKind partition_kind_from_string(const std::string& name);

void to_json(nlohmann::json& j, const PartitionSpec& spec);
void from_json(const nlohmann::json& j, PartitionSpec& spec);
void to_json(nlohmann::json& j, const ClientPartition& partition);
void from_json(const nlohmann::json& j, ClientPartition& partition);

}  // namespace fedcopl
