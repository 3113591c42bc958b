#pragma once

#include <array>
#include <string>
#include <string_view>

#include <json.hpp>

namespace priorlens {

// How priors enter the decoder skip connections.
enum class EmbeddingMode { kNone, kAdd, kConcat, kSat };

std::string to_string(EmbeddingMode mode);
EmbeddingMode parse_embedding_mode(std::string_view text);

namespace trainkit {

struct AblationConfig {
  bool use_hcl = true;  // distillation loss on the priors
  bool use_clc = true;  // cross-level connection in the prior branch
  bool use_mla = true;  // multi-level aggregation before embedding
  EmbeddingMode embedding = EmbeddingMode::kSat;

  bool uses_priors() const { return embedding != EmbeddingMode::kNone; }
  bool needs_student() const { return uses_priors() || use_hcl; }
  // Priors consumed without a distillation signal; trains, but flagged.
  bool unstable() const { return uses_priors() && !use_hcl; }

  void validate() const;
  nlohmann::json to_json() const;
  static AblationConfig from_json(const nlohmann::json& j);
  bool operator==(const AblationConfig&) const = default;
};

struct NamedAblation {
  const char* name;
  AblationConfig config;
};

// The eight rows of the ablation ladder, Net0 through Net6.
const std::array<NamedAblation, 8>& ablation_ladder();

// Case-insensitive; accepts "net0*" and "net0star".
AblationConfig ablation_by_name(std::string_view name);
std::string canonical_ablation_name(std::string_view name);

}  // namespace trainkit
}  // namespace priorlens
