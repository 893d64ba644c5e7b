#include "fedcopl/prompt_model.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

namespace fedcopl {

namespace {

constexpr const char* kModule = "prompt-model";

void check_temperature(double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ValidationError(kModule, "temperature must be positive and finite");
  }
}

// Normalized class directions n(base_c + text_c) and the pre-normalization norms.
struct TextDirections {
  std::vector<double> unit;  // C x d
  std::vector<double> norm;  // C
};

TextDirections text_directions(const PromptState& state) {
  const std::size_t num_classes = state.num_classes();
  const std::size_t dim = state.dim();
  TextDirections t{std::vector<double>(num_classes * dim), std::vector<double>(num_classes)};
  for (std::size_t c = 0; c < num_classes; ++c) {
    double* row = t.unit.data() + c * dim;
    double sq = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      row[i] = static_cast<double>(state.base_text(c, i)) + static_cast<double>(state.text(c, i));
      sq += row[i] * row[i];
    }
    const double n = std::sqrt(sq);
    if (!(n >= kDegenerateNorm) || !std::isfinite(n)) {
      throw Error(kModule, "degenerate text normalization for class " + std::to_string(c));
    }
    for (std::size_t i = 0; i < dim; ++i) row[i] /= n;
    t.norm[c] = n;
  }
  return t;
}

struct SampleTerms {
  double loss = 0.0;
  std::vector<double> z_hat;
  double z_norm = 0.0;
  std::vector<double> logit_grad;  // p - onehot
};

SampleTerms sample_terms(const PromptState& state, const TextDirections& text, const BatchItem& item,
                         double inv_temperature) {
  const std::size_t dim = state.dim();
  const std::size_t num_classes = state.num_classes();
  if (item.embedding.size() != dim) throw ValidationError(kModule, "embedding dimension mismatch");
  if (item.label >= num_classes) throw ValidationError(kModule, "label out of range");

  SampleTerms s;
  s.z_hat.resize(dim);
  double sq = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    s.z_hat[i] = static_cast<double>(item.embedding[i]) + static_cast<double>(state.visual[i]);
    sq += s.z_hat[i] * s.z_hat[i];
  }
  s.z_norm = std::sqrt(sq);
  if (!(s.z_norm >= kDegenerateNorm) || !std::isfinite(s.z_norm)) {
    throw Error(kModule, "degenerate visual normalization");
  }
  for (auto& v : s.z_hat) v /= s.z_norm;

  std::vector<double> logits(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double* t = text.unit.data() + c * dim;
    double acc = 0.0;
    for (std::size_t i = 0; i < dim; ++i) acc += s.z_hat[i] * t[i];
    logits[c] = acc * inv_temperature;
  }
  double max_logit = logits[0];
  for (double l : logits) max_logit = std::max(max_logit, l);
  double total = 0.0;
  for (double l : logits) total += std::exp(l - max_logit);
  const double log_normalizer = max_logit + std::log(total);
  s.loss = log_normalizer - logits[item.label];
  s.logit_grad.resize(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    s.logit_grad[c] = std::exp(logits[c] - log_normalizer) - (c == item.label ? 1.0 : 0.0);
  }
  return s;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(kModule, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace

PromptState PromptState::zeros(const Matrix& base_text) {
  return {std::vector<float>(base_text.cols(), 0.0f), Matrix(base_text.rows(), base_text.cols()),
          base_text};
}

std::vector<double> forward(const PromptState& state, std::span<const float> z, double temperature) {
  return state.classifier(temperature).probs(z);
}

Gradients Gradients::zeros_like(const PromptState& state) {
  return {std::vector<float>(state.dim(), 0.0f), Matrix(state.num_classes(), state.dim())};
}

LossAndGrads loss_and_grads(const PromptState& state, std::span<const BatchItem> batch,
                            double temperature) {
  check_temperature(temperature);
  if (batch.empty()) throw ValidationError(kModule, "empty batch");
  const std::size_t dim = state.dim();
  const std::size_t num_classes = state.num_classes();
  const double inv_t = 1.0 / temperature;
  const auto text = text_directions(state);

  double loss = 0.0;
  std::vector<double> grad_visual(dim, 0.0);
  // Accumulated dL/d n(b_c) before projecting through the text normalization.
  std::vector<double> grad_text_hat(num_classes * dim, 0.0);
  std::vector<double> grad_z_hat(dim);
  for (const auto& item : batch) {
    const auto s = sample_terms(state, text, item, inv_t);
    loss += s.loss;

    std::fill(grad_z_hat.begin(), grad_z_hat.end(), 0.0);
    for (std::size_t c = 0; c < num_classes; ++c) {
      const double g = s.logit_grad[c] * inv_t;
      const double* t = text.unit.data() + c * dim;
      double* gt = grad_text_hat.data() + c * dim;
      for (std::size_t i = 0; i < dim; ++i) {
        grad_z_hat[i] += g * t[i];
        gt[i] += g * s.z_hat[i];
      }
    }
    double radial = 0.0;
    for (std::size_t i = 0; i < dim; ++i) radial += s.z_hat[i] * grad_z_hat[i];
    for (std::size_t i = 0; i < dim; ++i) {
      grad_visual[i] += (grad_z_hat[i] - s.z_hat[i] * radial) / s.z_norm;
    }
  }

  const double inv_n = 1.0 / static_cast<double>(batch.size());
  LossAndGrads out{loss * inv_n, Gradients::zeros_like(state)};
  if (!std::isfinite(out.loss)) throw Error(kModule, "non-finite loss");
  for (std::size_t i = 0; i < dim; ++i) out.grads.visual[i] = static_cast<float>(grad_visual[i] * inv_n);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double* t = text.unit.data() + c * dim;
    const double* gt = grad_text_hat.data() + c * dim;
    double radial = 0.0;
    for (std::size_t i = 0; i < dim; ++i) radial += t[i] * gt[i];
    for (std::size_t i = 0; i < dim; ++i) {
      out.grads.text(c, i) = static_cast<float>((gt[i] - t[i] * radial) / text.norm[c] * inv_n);
    }
  }
  return out;
}

double batch_loss(const PromptState& state, std::span<const BatchItem> batch, double temperature) {
  check_temperature(temperature);
  if (batch.empty()) throw ValidationError(kModule, "empty batch");
  const auto text = text_directions(state);
  double loss = 0.0;
  for (const auto& item : batch) loss += sample_terms(state, text, item, 1.0 / temperature).loss;
  return loss / static_cast<double>(batch.size());
}

OptimizerState OptimizerState::for_state(const PromptState& state, double lr0, double momentum,
                                         std::uint64_t total_steps) {
  if (!(lr0 >= 0.0)) throw ValidationError(kModule, "learning rate must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError(kModule, "momentum must lie in [0, 1)");
  OptimizerState opt;
  opt.lr0 = lr0;
  opt.momentum = momentum;
  opt.velocity_visual.assign(state.dim(), 0.0f);
  opt.velocity_text = Matrix(state.num_classes(), state.dim());
  opt.total_steps = std::max<std::uint64_t>(total_steps, 1);
  return opt;
}

double OptimizerState::learning_rate() const {
  if (step >= total_steps) return 0.0;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void OptimizerState::reset_velocity() {
  std::fill(velocity_visual.begin(), velocity_visual.end(), 0.0f);
  std::fill(velocity_text.flat().begin(), velocity_text.flat().end(), 0.0f);
}

void sgd_step(PromptState& state, OptimizerState& opt, const Gradients& grads) {
  if (grads.visual.size() != state.visual.size() || grads.text.rows() != state.text.rows() ||
      grads.text.cols() != state.text.cols()) {
    throw ValidationError(kModule, "gradient shape mismatch");
  }
  const auto lr = static_cast<float>(opt.learning_rate());
  const auto mu = static_cast<float>(opt.momentum);
  for (std::size_t i = 0; i < state.visual.size(); ++i) {
    opt.velocity_visual[i] = mu * opt.velocity_visual[i] + grads.visual[i];
    state.visual[i] -= lr * opt.velocity_visual[i];
  }
  auto vt = opt.velocity_text.flat();
  auto gt = grads.text.flat();
  auto pt = state.text.flat();
  for (std::size_t i = 0; i < pt.size(); ++i) {
    vt[i] = mu * vt[i] + gt[i];
    pt[i] -= lr * vt[i];
  }
  ++opt.step;
}

void write_prompt_state(const PromptState& state, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(kModule, "cannot create " + dir.string());
  write_f32_file(dir / "visual.f32", state.visual);
  write_f32_file(dir / "text.f32", state.text.flat());
  write_f32_file(dir / "base_text.f32", state.base_text.flat());
  write_json(dir / "prompt.json", {{"dim", state.dim()},
                                   {"num_classes", state.num_classes()},
                                   {"dtype", "float32"},
                                   {"files",
                                    {{"visual", "visual.f32"},
                                     {"text", "text.f32"},
                                     {"base_text", "base_text.f32"}}}});
}

PromptState load_prompt_state(const std::filesystem::path& dir) {
  std::ifstream in(dir / "prompt.json");
  if (!in) throw Error(kModule, "missing " + (dir / "prompt.json").string());
  const auto meta = nlohmann::json::parse(in);
  const auto dim = meta.at("dim").get<std::size_t>();
  const auto num_classes = meta.at("num_classes").get<std::size_t>();
  PromptState s;
  s.visual = read_f32_file(dir / "visual.f32");
  if (s.visual.size() != dim) throw Error(kModule, "visual checkpoint size mismatch");
  auto text = read_f32_file(dir / "text.f32");
  auto base = read_f32_file(dir / "base_text.f32");
  if (text.size() != num_classes * dim || base.size() != num_classes * dim) {
    throw Error(kModule, "text checkpoint size mismatch");
  }
  s.text = Matrix(num_classes, dim, std::move(text));
  s.base_text = Matrix(num_classes, dim, std::move(base));
  return s;
}

}  // namespace fedcopl
