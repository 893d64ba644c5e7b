#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "fedcopl/prompt_model.hpp"

namespace fedcopl {

// Which prompt components the server averages.
enum class AggregationMode { visual_only, text_only, both, none };

enum class LabelingMode { copl, fpl_baseline, zero_shot_only };

const char* to_string(AggregationMode mode);
const char* to_string(LabelingMode mode);
AggregationMode aggregation_mode_from_string(const std::string& name);
LabelingMode labeling_mode_from_string(const std::string& name);

inline bool shares_visual(AggregationMode m) {
  return m == AggregationMode::visual_only || m == AggregationMode::both;
}
inline bool shares_text(AggregationMode m) {
  return m == AggregationMode::text_only || m == AggregationMode::both;
}

struct FederationConfig {
  std::size_t rounds = 20;            // T
  std::size_t local_epochs = 10;      // E
  std::size_t batch_size = 64;        // B
  double participation_rate = 1.0;    // R
  std::size_t refresh_interval = 5;   // Q
  AggregationMode aggregation_mode = AggregationMode::visual_only;
  LabelingMode labeling_mode = LabelingMode::copl;
  bool use_conf_filter = true;
  bool use_ent_filter = true;
  bool use_global_alloc = true;
  double conf_quantile = 0.5;         // tau_1 level
  double ent_quantile = 0.5;          // tau_2 level
  double temperature = kDefaultTemperature;
  // 0.1 * tau: the surrogate's offsets enter the logits with gain 1 / tau.
  double lr0 = 1e-3;
  double momentum = 0.9;
  // FPL per-class budget; 0 sizes it per client as floor(|filtered set| / C).
  std::size_t fpl_per_class = 0;
  std::uint64_t seed = 0;

  void validate() const;
  // m = max(floor(R * K), 1)
  std::size_t participants_per_round(std::size_t num_clients) const;
};

void to_json(nlohmann::json& j, const FederationConfig& c);
// Missing keys keep their current (default) values; unknown keys are rejected.
void from_json(const nlohmann::json& j, FederationConfig& c);

}  // namespace fedcopl
