#include "fedcopl/federation_config.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "fedcopl/error.hpp"

namespace fedcopl {

namespace {
constexpr const char* kModule = "federation";
}

const char* to_string(AggregationMode mode) {
  switch (mode) {
    case AggregationMode::visual_only: return "visual_only";
    case AggregationMode::text_only: return "text_only";
    case AggregationMode::both: return "both";
    case AggregationMode::none: return "none";
  }
  return "?";
}

const char* to_string(LabelingMode mode) {
  switch (mode) {
    case LabelingMode::copl: return "copl";
    case LabelingMode::fpl_baseline: return "fpl_baseline";
    case LabelingMode::zero_shot_only: return "zero_shot_only";
  }
  return "?";
}

AggregationMode aggregation_mode_from_string(const std::string& name) {
  for (auto m : {AggregationMode::visual_only, AggregationMode::text_only, AggregationMode::both,
                 AggregationMode::none}) {
    if (name == to_string(m)) return m;
  }
  throw ValidationError(kModule, "unknown aggregation_mode '" + name + "'");
}

LabelingMode labeling_mode_from_string(const std::string& name) {
  for (auto m : {LabelingMode::copl, LabelingMode::fpl_baseline, LabelingMode::zero_shot_only}) {
    if (name == to_string(m)) return m;
  }
  throw ValidationError(kModule, "unknown labeling_mode '" + name + "'");
}

void FederationConfig::validate() const {
  if (rounds < 1 || local_epochs < 1 || batch_size < 1 || refresh_interval < 1) {
    throw ValidationError(kModule, "rounds, local_epochs, batch_size and refresh_interval must be >= 1");
  }
  if (!(participation_rate > 0.0 && participation_rate <= 1.0)) {
    throw ValidationError(kModule, "participation_rate must lie in (0, 1]");
  }
  if (!(conf_quantile >= 0.0 && conf_quantile <= 1.0) || !(ent_quantile >= 0.0 && ent_quantile <= 1.0)) {
    throw ValidationError(kModule, "filter quantile levels must lie in [0, 1]");
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ValidationError(kModule, "temperature must be positive");
  }
  if (!(lr0 >= 0.0) || !std::isfinite(lr0)) throw ValidationError(kModule, "lr0 must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError(kModule, "momentum must lie in [0, 1)");
}

std::size_t FederationConfig::participants_per_round(std::size_t num_clients) const {
  const auto m = static_cast<std::size_t>(std::floor(participation_rate * static_cast<double>(num_clients)));
  return std::clamp<std::size_t>(m, 1, num_clients);
}

void to_json(nlohmann::json& j, const FederationConfig& c) {
  j = {{"rounds", c.rounds},
       {"local_epochs", c.local_epochs},
       {"batch_size", c.batch_size},
       {"participation_rate", c.participation_rate},
       {"refresh_interval", c.refresh_interval},
       {"aggregation_mode", to_string(c.aggregation_mode)},
       {"labeling_mode", to_string(c.labeling_mode)},
       {"use_conf_filter", c.use_conf_filter},
       {"use_ent_filter", c.use_ent_filter},
       {"use_global_alloc", c.use_global_alloc},
       {"conf_quantile", c.conf_quantile},
       {"ent_quantile", c.ent_quantile},
       {"temperature", c.temperature},
       {"lr0", c.lr0},
       {"momentum", c.momentum},
       {"fpl_per_class", c.fpl_per_class},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, FederationConfig& c) {
  static const std::set<std::string> known = {
      "rounds", "local_epochs", "batch_size", "participation_rate", "refresh_interval",
      "aggregation_mode", "labeling_mode", "use_conf_filter", "use_ent_filter", "use_global_alloc",
      "conf_quantile", "ent_quantile", "temperature", "lr0", "momentum", "fpl_per_class", "seed"};
  if (!j.is_object()) throw ValidationError(kModule, "federation config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ValidationError(kModule, "unknown federation key '" + key + "'");
  }
  try {
    c.rounds = j.value("rounds", c.rounds);
    c.local_epochs = j.value("local_epochs", c.local_epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.participation_rate = j.value("participation_rate", c.participation_rate);
    c.refresh_interval = j.value("refresh_interval", c.refresh_interval);
    if (j.contains("aggregation_mode")) {
      c.aggregation_mode = aggregation_mode_from_string(j.at("aggregation_mode").get<std::string>());
    }
    if (j.contains("labeling_mode")) {
      c.labeling_mode = labeling_mode_from_string(j.at("labeling_mode").get<std::string>());
    }
    c.use_conf_filter = j.value("use_conf_filter", c.use_conf_filter);
    c.use_ent_filter = j.value("use_ent_filter", c.use_ent_filter);
    c.use_global_alloc = j.value("use_global_alloc", c.use_global_alloc);
    c.conf_quantile = j.value("conf_quantile", c.conf_quantile);
    c.ent_quantile = j.value("ent_quantile", c.ent_quantile);
    c.temperature = j.value("temperature", c.temperature);
    c.lr0 = j.value("lr0", c.lr0);
    c.momentum = j.value("momentum", c.momentum);
    c.fpl_per_class = j.value("fpl_per_class", c.fpl_per_class);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(kModule, std::string("bad federation config value: ") + e.what());
  }
}

}  // namespace fedcopl
