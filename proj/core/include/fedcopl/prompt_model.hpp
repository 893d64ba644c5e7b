#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fedcopl/embedding_store.hpp"
#include "fedcopl/matrix.hpp"
#include "fedcopl/pseudo_labeler.hpp"

namespace fedcopl {

inline constexpr double kDefaultTemperature = 0.01;

// Embedding-space prompt surrogate. `visual` is an additive offset on the
// image embedding (shared across clients when aggregated); `text` holds one
// additive offset per class on top of the frozen class embeddings.
struct PromptState {
  std::vector<float> visual;  // d
  Matrix text;                // C x d
  Matrix base_text;           // C x d, frozen, unit rows

  static PromptState zeros(const Matrix& base_text);

  std::size_t dim() const noexcept { return base_text.cols(); }
  std::size_t num_classes() const noexcept { return base_text.rows(); }

  SimilarityClassifier classifier(double temperature) const {
    return {base_text, text, temperature, visual};
  }
};

// probs = softmax(<n(z + visual), n(base_c + text_c)> / temperature).
std::vector<double> forward(const PromptState& state, std::span<const float> z, double temperature);

struct BatchItem {
  std::span<const float> embedding;
  ClassId label = 0;
};

struct Gradients {
  std::vector<float> visual;
  Matrix text;

  static Gradients zeros_like(const PromptState& state);
};

struct LossAndGrads {
  double loss = 0.0;
  Gradients grads;
};

// Mean cross-entropy over the batch and its exact gradient with respect to
// both offsets, including the Jacobian (I - v v^T) / |v| of each L2
// normalization.
LossAndGrads loss_and_grads(const PromptState& state, std::span<const BatchItem> batch,
                            double temperature);
double batch_loss(const PromptState& state, std::span<const BatchItem> batch, double temperature);

// SGD with heavy-ball momentum and a cosine-annealed learning rate.
struct OptimizerState {
  double lr0 = 0.1;
  double momentum = 0.9;
  std::vector<float> velocity_visual;
  Matrix velocity_text;
  std::uint64_t step = 0;
  std::uint64_t total_steps = 1;

  static OptimizerState for_state(const PromptState& state, double lr0, double momentum,
                                  std::uint64_t total_steps);

  // lr0 * (1 + cos(pi * step / total_steps)) / 2, clamped to 0 past the horizon.
  double learning_rate() const;
  void reset_velocity();
};

// velocity <- momentum * velocity + grad; param <- param - lr(step) * velocity; ++step.
void sgd_step(PromptState& state, OptimizerState& opt, const Gradients& grads);

// Checkpoint in the bundle raw-float format: prompt.json + visual.f32,
// text.f32, base_text.f32.
void write_prompt_state(const PromptState& state, const std::filesystem::path& dir);
PromptState load_prompt_state(const std::filesystem::path& dir);

}  // namespace fedcopl
