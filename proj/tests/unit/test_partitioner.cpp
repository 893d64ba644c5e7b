#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>

#include "fedcopl/error.hpp"
#include "fedcopl/partitioner.hpp"

namespace fedcopl {
namespace {

std::vector<ClassId> balanced_labels(std::size_t num_classes, std::size_t per_class) {
  std::vector<ClassId> labels;
  for (std::size_t i = 0; i < num_classes * per_class; ++i) labels.push_back(static_cast<ClassId>(i % num_classes));
  return labels;
}

void expect_disjoint_cover(const ClientPartition& p, std::size_t n) {
  std::vector<int> seen(n, 0);
  for (const auto& a : p.assignments) {
    EXPECT_FALSE(a.empty());
    EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
    for (auto i : a) {
      ASSERT_LT(i, n);
      ++seen[i];
    }
  }
  for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(seen[i], 1) << "index " << i;
}

PartitionSpec dirichlet_spec(double beta, std::size_t clients, std::uint64_t seed) {
  PartitionSpec s;
  s.kind = PartitionKind::dirichlet;
  s.beta = beta;
  s.num_clients = clients;
  s.seed = seed;
  return s;
}

PartitionSpec quantity_spec(std::size_t s_per_client, std::size_t clients, std::uint64_t seed) {
  PartitionSpec s;
  s.kind = PartitionKind::quantity;
  s.classes_per_client = s_per_client;
  s.num_clients = clients;
  s.seed = seed;
  return s;
}

TEST(Dirichlet, LargeBetaSplitsEvenly) {
  const auto labels = balanced_labels(3, 1000);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = partition_dirichlet(labels, 3, dirichlet_spec(1e6, 2, seed));
    const auto hist = class_histogram(p, labels, 3);
    for (const auto& row : hist) {
      for (auto n : row) EXPECT_NEAR(static_cast<double>(n), 500.0, 50.0) << "seed " << seed;
    }
  }
}

TEST(Dirichlet, SingleClientGetsEverything) {
  const auto labels = balanced_labels(4, 7);
  for (double beta : {0.01, 1.0, 100.0}) {
    const auto p = partition_dirichlet(labels, 4, dirichlet_spec(beta, 1, 3));
    ASSERT_EQ(p.num_clients(), 1u);
    EXPECT_EQ(p.assignments[0].size(), labels.size());
  }
}

TEST(Dirichlet, SmallBetaConcentratesClasses) {
  const auto labels = balanced_labels(10, 500);
  int concentrated_seeds = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = partition_dirichlet(labels, 10, dirichlet_spec(0.1, 10, seed));
    const auto hist = class_histogram(p, labels, 10);
    int concentrated = 0;
    for (std::size_t c = 0; c < 10; ++c) {
      std::size_t best = 0;
      for (const auto& row : hist) best = std::max(best, row[c]);
      if (best > 250) ++concentrated;
    }
    if (concentrated > 5) ++concentrated_seeds;
  }
  EXPECT_GT(concentrated_seeds, 5);
}

TEST(Dirichlet, DisjointCoverAndDeterministic) {
  const auto labels = balanced_labels(10, 50);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto spec = dirichlet_spec(0.1, 10, seed);
    const auto p = partition_dirichlet(labels, 10, spec);
    expect_disjoint_cover(p, labels.size());
    EXPECT_EQ(p, partition_dirichlet(labels, 10, spec));
  }
  EXPECT_NE(partition_dirichlet(labels, 10, dirichlet_spec(0.1, 10, 1)),
            partition_dirichlet(labels, 10, dirichlet_spec(0.1, 10, 2)));
}

TEST(Dirichlet, MoreClientsThanSamplesRejected) {
  const auto labels = balanced_labels(2, 2);
  EXPECT_THROW(partition_dirichlet(labels, 2, dirichlet_spec(0.5, 5, 0)), ValidationError);
}

TEST(Dirichlet, RepairLeavesNoEmptyClient) {
  // Few samples and tiny beta make empty clients likely before repair.
  const auto labels = balanced_labels(2, 10);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto p = partition_dirichlet(labels, 2, dirichlet_spec(0.01, 8, seed));
    expect_disjoint_cover(p, labels.size());
  }
}

TEST(Quantity, TwoClassesPerClientCifarSetting) {
  const auto labels = balanced_labels(10, 100);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto p = partition_quantity(labels, 10, quantity_spec(2, 10, seed));
    expect_disjoint_cover(p, labels.size());
    const auto hist = class_histogram(p, labels, 10);
    std::vector<int> holders(10, 0);
    for (const auto& row : hist) {
      int support = 0;
      for (std::size_t c = 0; c < 10; ++c) {
        if (row[c] > 0) {
          ++support;
          ++holders[c];
        }
      }
      EXPECT_EQ(support, 2);
    }
    for (int h : holders) EXPECT_EQ(h, 2);
  }
}

TEST(Quantity, SingleClientHoldsEverything) {
  const auto labels = balanced_labels(5, 9);
  const auto p = partition_quantity(labels, 5, quantity_spec(5, 1, 0));
  ASSERT_EQ(p.num_clients(), 1u);
  EXPECT_EQ(p.assignments[0].size(), labels.size());
}

TEST(Quantity, FourClassesTwoClientsEnumeration) {
  const auto labels = balanced_labels(4, 8);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = partition_quantity(labels, 4, quantity_spec(2, 2, seed));
    const auto hist = class_histogram(p, labels, 4);
    for (const auto& row : hist) {
      std::size_t total = 0;
      int support = 0;
      for (auto n : row) {
        total += n;
        if (n > 0) {
          ++support;
          EXPECT_EQ(n, 8u);
        }
      }
      EXPECT_EQ(total, 16u);
      EXPECT_EQ(support, 2);
    }
  }
}

TEST(Quantity, RemainderGoesToEarliestHolders) {
  // 3 classes, 3 clients, 2 classes each: every class has two holders;
  // 7 samples of a class split as 4 + 3.
  const auto labels = balanced_labels(3, 7);
  const auto p = partition_quantity(labels, 3, quantity_spec(2, 3, 5));
  const auto hist = class_histogram(p, labels, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    std::multiset<std::size_t> sizes;
    for (const auto& row : hist) {
      if (row[c] > 0) sizes.insert(row[c]);
    }
    EXPECT_EQ(sizes, (std::multiset<std::size_t>{3, 4}));
  }
}

TEST(Quantity, SupportNeverExceedsS) {
  const auto labels = balanced_labels(7, 13);
  for (std::size_t s = 1; s <= 7; ++s) {
    for (std::size_t k = (7 + s - 1) / s; k <= 9; ++k) {
      const auto p = partition_quantity(labels, 7, quantity_spec(s, k, s * 31 + k));
      expect_disjoint_cover(p, labels.size());
      for (const auto& row : class_histogram(p, labels, 7)) {
        EXPECT_LE(std::count_if(row.begin(), row.end(), [](auto n) { return n > 0; }),
                  static_cast<std::ptrdiff_t>(s));
      }
    }
  }
}

TEST(Quantity, TooFewHoldersRejected) {
  const auto labels = balanced_labels(10, 5);
  EXPECT_THROW(partition_quantity(labels, 10, quantity_spec(2, 4, 0)), ValidationError);
  EXPECT_THROW(partition_quantity(labels, 10, quantity_spec(11, 4, 0)), ValidationError);
  EXPECT_THROW(partition_quantity(labels, 10, quantity_spec(0, 4, 0)), ValidationError);
}

TEST(PartitionSpec, Validation) {
  EXPECT_THROW(dirichlet_spec(0.0, 10, 0).validate(10), ValidationError);
  EXPECT_THROW(dirichlet_spec(-1.0, 10, 0).validate(10), ValidationError);
  EXPECT_THROW(dirichlet_spec(0.1, 0, 0).validate(10), ValidationError);
  EXPECT_NO_THROW(dirichlet_spec(0.1, 10, 0).validate(10));
}

TEST(PartitionJson, RoundTrip) {
  const auto labels = balanced_labels(4, 10);
  const auto p = partition_dirichlet(labels, 4, dirichlet_spec(0.3, 3, 9));
  const nlohmann::json j = p;
  EXPECT_EQ(j.at("num_clients"), 3);
  EXPECT_EQ(j.get<ClientPartition>(), p);
  const auto spec = quantity_spec(3, 6, 77);
  const nlohmann::json js = spec;
  const auto back = js.get<PartitionSpec>();
  EXPECT_EQ(back.kind, PartitionKind::quantity);
  EXPECT_EQ(back.classes_per_client, 3u);
  EXPECT_EQ(back.num_clients, 6u);
  EXPECT_EQ(back.seed, 77u);
}

TEST(RepairEmptyClients, MovesFromLargest) {
  ClientPartition p{{{0, 1, 2}, {}, {3, 4}}};
  repair_empty_clients(p);
  EXPECT_EQ(p.assignments[0], (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(p.assignments[1], (std::vector<std::size_t>{2}));
  ClientPartition impossible{{{0}, {}}};
  EXPECT_THROW(repair_empty_clients(impossible), ValidationError);
}

TEST(ValidatePartition, RejectsOverlapAndRange) {
  EXPECT_THROW(validate_partition(ClientPartition{{{0, 1}, {1}}}, 3), ValidationError);
  EXPECT_THROW(validate_partition(ClientPartition{{{0, 5}}}, 3), ValidationError);
  EXPECT_THROW(validate_partition(ClientPartition{{{0}, {}}}, 3), ValidationError);
  EXPECT_NO_THROW(validate_partition(ClientPartition{{{0}, {2}}}, 3));
}

TEST(TestSplit, FollowsClientLabelDistribution) {
  const auto train = balanced_labels(4, 100);
  const auto test = balanced_labels(4, 40);
  const auto p = partition_dirichlet(train, 4, dirichlet_spec(0.2, 5, 4));
  const auto shards = split_test_set(p, train, test, 4, 4);
  ASSERT_EQ(shards.num_clients(), 5u);
  validate_partition(shards, test.size());
  const auto train_hist = class_histogram(p, train, 4);
  const auto test_hist = class_histogram(shards, test, 4);
  for (std::size_t k = 0; k < 5; ++k) {
    for (std::size_t c = 0; c < 4; ++c) {
      const double expected = 40.0 * static_cast<double>(train_hist[k][c]) / 100.0;
      // floor cuts at cumulative shares move each shard by less than one sample,
      // plus at most one repair move.
      EXPECT_NEAR(static_cast<double>(test_hist[k][c]), expected, 2.0) << k << "," << c;
      if (train_hist[k][c] == 0 && test_hist[k][c] > 0) {
        EXPECT_EQ(test_hist[k][c], 1u);
      }
    }
  }
  EXPECT_EQ(shards, split_test_set(p, train, test, 4, 4));
}

TEST(TestSplit, SingleClientGetsWholeTestSet) {
  const auto train = balanced_labels(3, 5);
  const auto test = balanced_labels(3, 4);
  const ClientPartition p{{{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14}}};
  const auto shards = split_test_set(p, train, test, 3, 0);
  EXPECT_EQ(shards.assignments[0].size(), test.size());
}

TEST(TestSplit, UnheldClassesAreLeftOut) {
  const auto train = std::vector<ClassId>{0, 0, 1, 1};
  const auto test = std::vector<ClassId>{0, 1, 2, 2};
  const ClientPartition p{{{0, 1}, {2, 3}}};
  const auto shards = split_test_set(p, train, test, 3, 0);
  EXPECT_EQ(shards.assignments[0], (std::vector<std::size_t>{0}));
  EXPECT_EQ(shards.assignments[1], (std::vector<std::size_t>{1}));
}

}  // namespace
}  // namespace fedcopl
