#pragma once

#include <cstdint>
#include <string>

#include "fedcopl/embedding_store.hpp"

namespace fedcopl {

// Gaussian-cluster stand-in for frozen vision-language embeddings.
//
// Prototypes mu_c and the gap directions g_i, g_t form one random orthonormal
// set (so dim >= num_classes + 2). Image embeddings are
// n(image_gap * g_i + mu_c + cluster_noise * eps) and class text embeddings
// n(text_gap * g_t + (1 - a) mu_c + a mu_c' + text_noise * u_c), where g_i and
// g_t are the shared modality-gap directions (image/text cosines
// are small and tightly spread), c' is the confuser of c on a random cycle over
// the classes, a = text_confusion and u_c is a random unit misalignment.
// Zero-shot accuracy is limited by the misalignment, not by cluster overlap.
struct SyntheticSpec {
  std::string name = "synthetic";
  std::size_t num_classes = 10;
  std::size_t dim = 32;
  std::size_t train_per_class = 500;
  std::size_t test_per_class = 100;
  double cluster_noise = 0.2;   // per-coordinate std of eps
  double text_confusion = 0.45; // in [0, 0.5) keeps the own class ahead on average
  double text_noise = 0.1;      // norm of the random per-class misalignment
  double image_gap = 2.0;
  double text_gap = 2.0;
  std::uint64_t seed = 0;
};

EmbeddingBundle make_synthetic_bundle(const SyntheticSpec& spec);

}  // namespace fedcopl
