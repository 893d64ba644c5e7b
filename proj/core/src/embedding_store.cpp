#include "fedcopl/embedding_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

namespace fedcopl {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(BundleErrorKind kind) {
  switch (kind) {
    case BundleErrorKind::missing_file: return "missing file";
    case BundleErrorKind::malformed_manifest: return "malformed manifest";
    case BundleErrorKind::size_mismatch: return "size mismatch";
    case BundleErrorKind::non_finite: return "non-finite value";
    case BundleErrorKind::not_unit_norm: return "row not unit norm";
    case BundleErrorKind::label_out_of_range: return "label out of range";
    case BundleErrorKind::io: return "i/o failure";
  }
  return "unknown";
}

BundleError::BundleError(BundleErrorKind kind, const std::string& message)
    : Error("embedding-store", std::string(to_string(kind)) + ": " + message), kind_(kind) {}

namespace {

constexpr const char* kManifest = "manifest.json";

std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

std::vector<char> read_bytes(const fs::path& path) {
  if (!fs::exists(path)) {
    throw BundleError(BundleErrorKind::missing_file, path.string());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BundleError(BundleErrorKind::io, "cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

std::vector<std::uint32_t> decode_words(const std::vector<char>& bytes, const fs::path& path) {
  if (bytes.size() % 4 != 0) {
    throw BundleError(BundleErrorKind::size_mismatch,
                      path.string() + " length " + std::to_string(bytes.size()) +
                          " is not a multiple of 4");
  }
  std::vector<std::uint32_t> words(bytes.size() / 4);
  std::memcpy(words.data(), bytes.data(), bytes.size());
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& w : words) w = byteswap32(w);
  }
  return words;
}

void write_words(const fs::path& path, std::span<const std::uint32_t> words) {
  std::vector<std::uint32_t> le(words.begin(), words.end());
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& w : le) w = byteswap32(w);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw BundleError(BundleErrorKind::io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(le.data()),
            static_cast<std::streamsize>(le.size() * sizeof(std::uint32_t)));
  if (!out) throw BundleError(BundleErrorKind::io, "write failed for " + path.string());
}

Matrix load_matrix(const fs::path& path, std::size_t rows, std::size_t cols, const char* what) {
  auto values = read_f32_file(path);
  if (values.size() != rows * cols) {
    throw BundleError(BundleErrorKind::size_mismatch,
                      std::string(what) + ": dimension mismatch, expected " +
                          std::to_string(rows) + "x" + std::to_string(cols) + " = " +
                          std::to_string(rows * cols) + " floats, file holds " +
                          std::to_string(values.size()));
  }
  return Matrix(rows, cols, std::move(values));
}

std::vector<ClassId> load_labels(const fs::path& path, std::size_t count, const char* what) {
  auto labels = read_u32_file(path);
  if (labels.size() != count) {
    throw BundleError(BundleErrorKind::size_mismatch,
                      std::string(what) + ": expected " + std::to_string(count) +
                          " labels, file holds " + std::to_string(labels.size()));
  }
  return labels;
}

void check_finite(const Matrix& m, const char* what) {
  for (float v : m.flat()) {
    if (!std::isfinite(v)) {
      throw BundleError(BundleErrorKind::non_finite, std::string(what) + " contains NaN or Inf");
    }
  }
}

void normalize_rows(Matrix& m, const char* what) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double norm = std::sqrt(squared_norm(row));
    if (std::abs(norm - 1.0) <= kUnitNormSlack) continue;
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw BundleError(BundleErrorKind::non_finite,
                        std::string(what) + " row " + std::to_string(r) +
                            " is non-finite after normalization (norm " + std::to_string(norm) + ")");
    }
    for (auto& v : row) v = static_cast<float>(static_cast<double>(v) / norm);
  }
}

void check_unit_rows(const Matrix& m, const char* what) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double norm = std::sqrt(squared_norm(m.row(r)));
    if (std::abs(norm - 1.0) > kUnitNormTolerance) {
      throw BundleError(BundleErrorKind::not_unit_norm,
                        std::string(what) + " row " + std::to_string(r) + " has norm " +
                            std::to_string(norm));
    }
  }
}

void check_labels(const std::vector<ClassId>& labels, std::size_t num_classes, const char* what) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw BundleError(BundleErrorKind::label_out_of_range,
                        std::string(what) + "[" + std::to_string(i) + "] = " +
                            std::to_string(labels[i]) + " >= num_classes " +
                            std::to_string(num_classes));
    }
  }
}

template <typename T>
T manifest_field(const json& manifest, const char* key) {
  if (!manifest.contains(key)) {
    throw BundleError(BundleErrorKind::malformed_manifest, std::string("missing field '") + key + "'");
  }
  try {
    return manifest.at(key).get<T>();
  } catch (const json::exception& e) {
    throw BundleError(BundleErrorKind::malformed_manifest,
                      std::string("field '") + key + "': " + e.what());
  }
}

}  // namespace

std::vector<float> read_f32_file(const fs::path& path) {
  const auto words = decode_words(read_bytes(path), path);
  std::vector<float> values(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) values[i] = std::bit_cast<float>(words[i]);
  return values;
}

std::vector<std::uint32_t> read_u32_file(const fs::path& path) {
  return decode_words(read_bytes(path), path);
}

void write_f32_file(const fs::path& path, std::span<const float> values) {
  std::vector<std::uint32_t> words(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) words[i] = std::bit_cast<std::uint32_t>(values[i]);
  write_words(path, words);
}

void write_u32_file(const fs::path& path, std::span<const std::uint32_t> values) {
  write_words(path, values);
}

TrainView EmbeddingBundle::full_train_view() const {
  std::vector<std::size_t> indices(train_size());
  std::iota(indices.begin(), indices.end(), std::size_t{0});
  return {train_embeddings, std::move(indices)};
}

void EmbeddingBundle::validate() const {
  if (dim == 0 || num_classes == 0) {
    throw BundleError(BundleErrorKind::malformed_manifest, "dim and num_classes must be positive");
  }
  if (class_names.size() != num_classes) {
    throw BundleError(BundleErrorKind::malformed_manifest, "class_names length != num_classes");
  }
  const auto shape_ok = [&](const Matrix& m, std::size_t rows) {
    return m.rows() == rows && m.cols() == dim;
  };
  if (!shape_ok(train_embeddings, train_labels.size()) ||
      !shape_ok(test_embeddings, test_labels.size()) || !shape_ok(text_embeddings, num_classes)) {
    throw BundleError(BundleErrorKind::size_mismatch, "embedding matrix shapes disagree with counts");
  }
  check_finite(train_embeddings, "train_embeddings");
  check_finite(test_embeddings, "test_embeddings");
  check_finite(text_embeddings, "text_embeddings");
  check_unit_rows(train_embeddings, "train_embeddings");
  check_unit_rows(test_embeddings, "test_embeddings");
  check_unit_rows(text_embeddings, "text_embeddings");
  check_labels(train_labels, num_classes, "train_labels");
  check_labels(test_labels, num_classes, "test_labels");
}

EmbeddingBundle load_bundle(const fs::path& dir) {
  const auto manifest_path = dir / kManifest;
  const auto manifest_bytes = read_bytes(manifest_path);
  json manifest;
  try {
    manifest = json::parse(manifest_bytes.begin(), manifest_bytes.end());
  } catch (const json::parse_error& e) {
    throw BundleError(BundleErrorKind::malformed_manifest, e.what());
  }

  EmbeddingBundle b;
  b.name = manifest_field<std::string>(manifest, "name");
  b.dim = manifest_field<std::size_t>(manifest, "dim");
  b.num_classes = manifest_field<std::size_t>(manifest, "num_classes");
  b.class_names = manifest_field<std::vector<std::string>>(manifest, "class_names");
  b.normalization = manifest.value("normalization", std::string("l2"));
  const auto dtype = manifest.value("dtype", std::string("float32"));
  if (dtype != "float32") {
    throw BundleError(BundleErrorKind::malformed_manifest, "unsupported dtype '" + dtype + "'");
  }
  if (b.normalization != "l2" && b.normalization != "none") {
    throw BundleError(BundleErrorKind::malformed_manifest,
                      "unsupported normalization '" + b.normalization + "'");
  }
  const auto files = manifest_field<json>(manifest, "files");
  const auto counts = manifest_field<json>(manifest, "counts");
  const auto n_train = manifest_field<std::size_t>(counts, "train");
  const auto n_test = manifest_field<std::size_t>(counts, "test");
  const auto file = [&](const char* key) { return dir / manifest_field<std::string>(files, key); };

  b.train_embeddings = load_matrix(file("train_embeddings"), n_train, b.dim, "train_embeddings");
  b.train_labels = load_labels(file("train_labels"), n_train, "train_labels");
  b.test_embeddings = load_matrix(file("test_embeddings"), n_test, b.dim, "test_embeddings");
  b.test_labels = load_labels(file("test_labels"), n_test, "test_labels");
  b.text_embeddings = load_matrix(file("text_embeddings"), b.num_classes, b.dim, "text_embeddings");

  check_finite(b.train_embeddings, "train_embeddings");
  check_finite(b.test_embeddings, "test_embeddings");
  check_finite(b.text_embeddings, "text_embeddings");
  if (b.normalization == "l2") {
    normalize_rows(b.train_embeddings, "train_embeddings");
    normalize_rows(b.test_embeddings, "test_embeddings");
    normalize_rows(b.text_embeddings, "text_embeddings");
  }
  b.validate();
  return b;
}

void write_bundle(const EmbeddingBundle& bundle, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw BundleError(BundleErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());

  json manifest = {
      {"name", bundle.name},
      {"dim", bundle.dim},
      {"num_classes", bundle.num_classes},
      {"class_names", bundle.class_names},
      {"files",
       {{"train_embeddings", "train_embeddings.f32"},
        {"train_labels", "train_labels.u32"},
        {"test_embeddings", "test_embeddings.f32"},
        {"test_labels", "test_labels.u32"},
        {"text_embeddings", "text_embeddings.f32"}}},
      {"counts", {{"train", bundle.train_size()}, {"test", bundle.test_size()}}},
      {"normalization", bundle.normalization},
      {"dtype", "float32"},
  };
  write_f32_file(dir / "train_embeddings.f32", bundle.train_embeddings.flat());
  write_u32_file(dir / "train_labels.u32", bundle.train_labels);
  write_f32_file(dir / "test_embeddings.f32", bundle.test_embeddings.flat());
  write_u32_file(dir / "test_labels.u32", bundle.test_labels);
  write_f32_file(dir / "text_embeddings.f32", bundle.text_embeddings.flat());

  std::ofstream out(dir / kManifest, std::ios::trunc);
  if (!out) throw BundleError(BundleErrorKind::io, "cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
  if (!out) throw BundleError(BundleErrorKind::io, "manifest write failed in " + dir.string());
}

}  // namespace fedcopl
