#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fedcopl/error.hpp"
#include "fedcopl/matrix.hpp"

namespace fedcopl {

using ClassId = std::uint32_t;

enum class BundleErrorKind {
  missing_file,
  malformed_manifest,
  size_mismatch,
  non_finite,
  not_unit_norm,
  label_out_of_range,
  io,
};

const char* to_string(BundleErrorKind kind);

class BundleError : public Error {
 public:
  BundleError(BundleErrorKind kind, const std::string& message);

  BundleErrorKind kind() const noexcept { return kind_; }

 private:
  BundleErrorKind kind_;
};

// Rows whose L2 norm is within this distance of 1 are left bit-for-bit
// untouched by ingestion normalization.
inline constexpr double kUnitNormSlack = 1e-6;
// Tolerance for the unit-norm invariant on an ingested bundle.
inline constexpr double kUnitNormTolerance = 1e-4;

// Read-only view of training embeddings for one client (or the whole train
// split). Carries no labels: code that only sees a TrainView cannot read
// ground truth.
class TrainView {
 public:
  TrainView(const Matrix& embeddings, std::vector<std::size_t> indices)
      : embeddings_(&embeddings), indices_(std::move(indices)) {}

  std::size_t size() const noexcept { return indices_.size(); }
  std::size_t dim() const noexcept { return embeddings_->cols(); }
  const std::vector<std::size_t>& indices() const noexcept { return indices_; }

  // Embedding of a sample by its global train index.
  std::span<const float> embedding(std::size_t global_index) const {
    return embeddings_->row(global_index);
  }
  // Embedding of the i-th sample in this view.
  std::span<const float> at(std::size_t i) const { return embeddings_->row(indices_[i]); }

 private:
  const Matrix* embeddings_;
  std::vector<std::size_t> indices_;
};

// Frozen image/text embeddings plus the hidden ground truth, as stored on
// disk by the extractor. Immutable after load.
struct EmbeddingBundle {
  std::string name;
  std::size_t dim = 0;
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;
  Matrix train_embeddings;
  std::vector<ClassId> train_labels;  // evaluation and partitioning only
  Matrix test_embeddings;
  std::vector<ClassId> test_labels;
  Matrix text_embeddings;  // C x d, one row per class prompt
  std::string normalization = "l2";

  std::size_t train_size() const noexcept { return train_labels.size(); }
  std::size_t test_size() const noexcept { return test_labels.size(); }

  TrainView train_view(std::vector<std::size_t> indices) const {
    return {train_embeddings, std::move(indices)};
  }
  TrainView full_train_view() const;

  // Throws BundleError if any structural invariant is violated.
  void validate() const;
};

// Loads `dir/manifest.json` and the raw little-endian files it references.
// With normalization "l2" rows are rescaled to unit norm (rows already
// within kUnitNormSlack of unit length are kept verbatim); with "none" they
// must already be unit length.
EmbeddingBundle load_bundle(const std::filesystem::path& dir);

// Writes manifest.json plus raw files into `dir` (created if absent).
void write_bundle(const EmbeddingBundle& bundle, const std::filesystem::path& dir);

// Raw binary32 / uint32 little-endian file helpers, shared with checkpointing.
std::vector<float> read_f32_file(const std::filesystem::path& path);
std::vector<std::uint32_t> read_u32_file(const std::filesystem::path& path);
void write_f32_file(const std::filesystem::path& path, std::span<const float> values);
void write_u32_file(const std::filesystem::path& path, std::span<const std::uint32_t> values);

}  // namespace fedcopl
