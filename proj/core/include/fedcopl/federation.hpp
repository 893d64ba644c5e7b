#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fedcopl/embedding_store.hpp"
#include "fedcopl/federation_config.hpp"
#include "fedcopl/metrics.hpp"
#include "fedcopl/partitioner.hpp"
#include "fedcopl/prompt_model.hpp"
#include "fedcopl/pseudo_labeler.hpp"

namespace fedcopl {

// Fixed per-message framing charged on the simulated wire, in bytes.
inline constexpr std::uint64_t kWireFrameBytes = 16;

enum class WireDirection { up, down };

// One simulated client<->server message. `float_count` counts 4-byte
// values (floats or integer counts) in the payload.
struct WireMessage {
  std::size_t round = 0;
  WireDirection direction = WireDirection::up;
  std::string payload_kind;
  std::size_t client = 0;
  std::uint64_t float_count = 0;

  std::uint64_t bytes() const noexcept { return kWireFrameBytes + 4 * float_count; }
};

void to_json(nlohmann::json& j, const WireMessage& m);

// Parameters uploaded by one client, weighted by its realized |D~_k|.
struct ClientUpload {
  std::span<const float> visual;
  const Matrix* text = nullptr;
  double weight = 0.0;
};

struct AggregatedParams {
  std::optional<std::vector<float>> visual;
  std::optional<Matrix> text;
};

// Weighted mean sum_k (w_k / sum_i w_i) * p_k, reduced in the given order.
std::vector<float> weighted_average(std::span<const std::span<const float>> params,
                                    std::span<const double> weights);

// Averages the components selected by `mode`; the others stay unset
// (client-local).
AggregatedParams aggregate(std::span<const ClientUpload> uploads, AggregationMode mode);

struct GlobalState {
  std::vector<float> global_visual;
  Matrix global_text;  // text aggregate (text_only / both)
  std::vector<PromptState> client_states;
  std::vector<PseudoDataset> datasets;
  std::size_t round = 0;
};

struct RunOptions {
  std::size_t threads = 1;
};

struct RunResult {
  std::vector<RoundReport> rounds;
  std::vector<WireMessage> wire;
  GlobalState final_state;
  ClientPartition test_shards;  // per-client test rows used for personalized accuracy
};

// Executes config.rounds rounds of cooperative pseudo labeling + local
// training + aggregation. Output is independent of options.threads.
RunResult run(const EmbeddingBundle& bundle, const ClientPartition& partition,
              const FederationConfig& config, const RunOptions& options = {});

}  // namespace fedcopl
