#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>

#include <nlohmann/json.hpp>

#include "fedcopl/embedding_store.hpp"
#include "fedcopl/synthetic.hpp"
#include "support.hpp"

namespace fedcopl {
namespace {

using test::TempDir;

std::vector<char> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

BundleErrorKind load_error_kind(const std::filesystem::path& dir) {
  try {
    (void)load_bundle(dir);
  } catch (const BundleError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "load_bundle did not throw";
  return BundleErrorKind::io;
}

void edit_manifest(const std::filesystem::path& dir, const std::function<void(nlohmann::json&)>& fn) {
  nlohmann::json j;
  {
    std::ifstream in(dir / "manifest.json");
    in >> j;
  }
  fn(j);
  std::ofstream(dir / "manifest.json") << j.dump(2);
}

EmbeddingBundle small_bundle() {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.dim = 8;
  spec.train_per_class = 5;
  spec.test_per_class = 2;
  spec.seed = 11;
  return make_synthetic_bundle(spec);
}

TEST(EmbeddingStore, LoadsHandWrittenToy) {
  const auto b = load_bundle(test::data_dir() / "toy");
  EXPECT_EQ(b.name, "toy");
  EXPECT_EQ(b.dim, 3u);
  EXPECT_EQ(b.num_classes, 2u);
  EXPECT_EQ(b.class_names, (std::vector<std::string>{"cat", "dog"}));
  ASSERT_EQ(b.train_size(), 4u);
  ASSERT_EQ(b.test_size(), 2u);
  EXPECT_EQ(b.train_labels, (std::vector<ClassId>{0, 0, 1, 1}));
  EXPECT_EQ(b.test_labels, (std::vector<ClassId>{1, 1}));
  EXPECT_FLOAT_EQ(b.train_embeddings(1, 0), 0.8f);
  EXPECT_FLOAT_EQ(b.train_embeddings(3, 2), 0.8f);
  EXPECT_FLOAT_EQ(b.text_embeddings(1, 1), 1.0f);
}

TEST(EmbeddingStore, RoundTripIsByteIdentical) {
  const auto src = test::data_dir() / "toy";
  TempDir tmp;
  write_bundle(load_bundle(src), tmp.path());
  for (const char* f : {"train_embeddings.f32", "train_labels.u32", "test_embeddings.f32",
                        "test_labels.u32", "text_embeddings.f32"}) {
    EXPECT_EQ(file_bytes(src / f), file_bytes(tmp / f)) << f;
  }
}

TEST(EmbeddingStore, RoundTripPreservesEveryField) {
  const auto b = small_bundle();
  TempDir tmp;
  write_bundle(b, tmp.path());
  const auto c = load_bundle(tmp.path());
  EXPECT_EQ(c.name, b.name);
  EXPECT_EQ(c.dim, b.dim);
  EXPECT_EQ(c.num_classes, b.num_classes);
  EXPECT_EQ(c.class_names, b.class_names);
  EXPECT_EQ(c.train_embeddings, b.train_embeddings);
  EXPECT_EQ(c.train_labels, b.train_labels);
  EXPECT_EQ(c.test_embeddings, b.test_embeddings);
  EXPECT_EQ(c.test_labels, b.test_labels);
  EXPECT_EQ(c.text_embeddings, b.text_embeddings);
}

TEST(EmbeddingStore, RawHelpersPreserveSubnormalBitPatterns) {
  TempDir tmp;
  const std::vector<float> values{std::numeric_limits<float>::denorm_min(), -std::numeric_limits<float>::denorm_min(),
                                  1e-40f, -0.0f, std::numeric_limits<float>::min(), 1.0f};
  write_f32_file(tmp / "x.f32", values);
  const auto back = read_f32_file(tmp / "x.f32");
  ASSERT_EQ(back.size(), values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    EXPECT_EQ(std::bit_cast<std::uint32_t>(back[i]), std::bit_cast<std::uint32_t>(values[i]));
  }
}

TEST(EmbeddingStore, FilesAreLittleEndian) {
  TempDir tmp;
  write_f32_file(tmp / "one.f32", std::vector<float>{1.0f});
  write_u32_file(tmp / "n.u32", std::vector<std::uint32_t>{0x01020304u});
  const auto f = file_bytes(tmp / "one.f32");
  const auto u = file_bytes(tmp / "n.u32");
  ASSERT_EQ(f.size(), 4u);
  EXPECT_EQ(static_cast<unsigned char>(f[3]), 0x3f);
  EXPECT_EQ(static_cast<unsigned char>(f[2]), 0x80);
  ASSERT_EQ(u.size(), 4u);
  EXPECT_EQ(u[0], 0x04);
  EXPECT_EQ(u[3], 0x01);
}

TEST(EmbeddingStore, NormalizesNonUnitRows) {
  auto b = small_bundle();
  for (auto& x : b.train_embeddings.row(0)) x *= 3.0f;
  b.normalization = "l2";
  TempDir tmp;
  write_bundle(b, tmp.path());
  const auto c = load_bundle(tmp.path());
  for (std::size_t r = 0; r < c.train_size(); ++r) {
    EXPECT_NEAR(std::sqrt(squared_norm(c.train_embeddings.row(r))), 1.0, 1e-6);
  }
}

TEST(EmbeddingStore, UnnormalizedRowsRejectedWithoutL2) {
  auto b = small_bundle();
  for (auto& x : b.train_embeddings.row(0)) x *= 3.0f;
  b.normalization = "none";
  TempDir tmp;
  write_bundle(b, tmp.path());
  EXPECT_EQ(load_error_kind(tmp.path()), BundleErrorKind::not_unit_norm);
}

TEST(EmbeddingStore, ZeroRowIsNonFiniteAfterNormalization) {
  TempDir tmp;
  std::filesystem::copy(test::data_dir() / "toy", tmp.path(), std::filesystem::copy_options::recursive);
  write_f32_file(tmp / "train_embeddings.f32",
                 std::vector<float>{1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0.6f, 0.8f});
  EXPECT_EQ(load_error_kind(tmp.path()), BundleErrorKind::non_finite);
}

TEST(EmbeddingStore, NaNValueRejected) {
  TempDir tmp;
  std::filesystem::copy(test::data_dir() / "toy", tmp.path(), std::filesystem::copy_options::recursive);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  write_f32_file(tmp / "test_embeddings.f32", std::vector<float>{0.6f, 0.8f, 0, nan, 0, 1});
  EXPECT_EQ(load_error_kind(tmp.path()), BundleErrorKind::non_finite);
}

TEST(EmbeddingStore, DimensionMismatchNamed) {
  TempDir tmp;
  std::filesystem::copy(test::data_dir() / "toy", tmp.path(), std::filesystem::copy_options::recursive);
  // 4 rows of d=3 minus one float.
  write_f32_file(tmp / "train_embeddings.f32", std::vector<float>(11, 0.5f));
  try {
    (void)load_bundle(tmp.path());
    FAIL() << "expected dimension mismatch";
  } catch (const BundleError& e) {
    EXPECT_EQ(e.kind(), BundleErrorKind::size_mismatch);
    EXPECT_NE(std::string(e.what()).find("dimension mismatch"), std::string::npos) << e.what();
  }
}

TEST(EmbeddingStore, ManifestDimDisagreesWithBytes) {
  TempDir tmp;
  std::filesystem::copy(test::data_dir() / "toy", tmp.path(), std::filesystem::copy_options::recursive);
  edit_manifest(tmp.path(), [](nlohmann::json& j) { j["dim"] = 4; });
  EXPECT_EQ(load_error_kind(tmp.path()), BundleErrorKind::size_mismatch);
}

TEST(EmbeddingStore, LabelOutOfRange) {
  TempDir tmp;
  std::filesystem::copy(test::data_dir() / "toy", tmp.path(), std::filesystem::copy_options::recursive);
  write_u32_file(tmp / "train_labels.u32", std::vector<std::uint32_t>{0, 0, 1, 2});
  EXPECT_EQ(load_error_kind(tmp.path()), BundleErrorKind::label_out_of_range);
}

TEST(EmbeddingStore, MissingFiles) {
  TempDir tmp;
  EXPECT_EQ(load_error_kind(tmp.path()), BundleErrorKind::missing_file);
  std::filesystem::copy(test::data_dir() / "toy", tmp.path(), std::filesystem::copy_options::recursive);
  std::filesystem::remove(tmp / "text_embeddings.f32");
  EXPECT_EQ(load_error_kind(tmp.path()), BundleErrorKind::missing_file);
}

TEST(EmbeddingStore, MalformedManifest) {
  TempDir tmp;
  std::filesystem::copy(test::data_dir() / "toy", tmp.path(), std::filesystem::copy_options::recursive);
  std::ofstream(tmp / "manifest.json") << "{ not json";
  EXPECT_EQ(load_error_kind(tmp.path()), BundleErrorKind::malformed_manifest);
  std::ofstream(tmp / "manifest.json") << R"({"name": "x"})";
  EXPECT_EQ(load_error_kind(tmp.path()), BundleErrorKind::malformed_manifest);
}

TEST(EmbeddingStore, WriteToUnwritablePathIsIoError) {
  TempDir tmp;
  std::ofstream(tmp / "file") << "x";
  try {
    write_bundle(small_bundle(), tmp / "file" / "sub");
    FAIL() << "expected an I/O error";
  } catch (const BundleError& e) {
    EXPECT_EQ(e.kind(), BundleErrorKind::io);
  }
}

TEST(EmbeddingStore, TrainViewExposesEmbeddingsOnly) {
  const auto b = load_bundle(test::data_dir() / "toy");
  const auto view = b.train_view({3, 1});
  ASSERT_EQ(view.size(), 2u);
  EXPECT_EQ(view.dim(), 3u);
  EXPECT_EQ(view.indices(), (std::vector<std::size_t>{3, 1}));
  EXPECT_EQ(view.at(0)[2], b.train_embeddings(3, 2));
  EXPECT_EQ(view.embedding(1)[0], b.train_embeddings(1, 0));
  EXPECT_EQ(b.full_train_view().size(), 4u);
}

}  // namespace
}  // namespace fedcopl
