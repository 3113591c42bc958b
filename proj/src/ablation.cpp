#include "priorlens/ablation.hpp"

#include <algorithm>
#include <cctype>

#include "priorlens/error.hpp"

namespace priorlens {

std::string to_string(EmbeddingMode mode) {
  switch (mode) {
    case EmbeddingMode::kNone: return "none";
    case EmbeddingMode::kAdd: return "add";
    case EmbeddingMode::kConcat: return "concat";
    case EmbeddingMode::kSat: return "sat";
  }
  return "none";
}

EmbeddingMode parse_embedding_mode(std::string_view text) {
  if (text == "none") return EmbeddingMode::kNone;
  if (text == "add") return EmbeddingMode::kAdd;
  if (text == "concat") return EmbeddingMode::kConcat;
  if (text == "sat") return EmbeddingMode::kSat;
  throw ValidationError("embedding: unknown mode '" + std::string(text) + "' (none|add|concat|sat)");
}

namespace trainkit {

void AblationConfig::validate() const {
  if (!uses_priors() && use_mla) throw ValidationError("ablation: use_mla requires a prior-consuming embedding");
}

nlohmann::json AblationConfig::to_json() const {
  return {{"use_hcl", use_hcl}, {"use_clc", use_clc}, {"use_mla", use_mla}, {"embedding", to_string(embedding)}};
}

AblationConfig AblationConfig::from_json(const nlohmann::json& j) {
  AblationConfig a;
  a.use_hcl = j.value("use_hcl", a.use_hcl);
  a.use_clc = j.value("use_clc", a.use_clc);
  a.use_mla = j.value("use_mla", a.use_mla);
  a.embedding = parse_embedding_mode(j.value("embedding", to_string(a.embedding)));
  a.validate();
  return a;
}

const std::array<NamedAblation, 8>& ablation_ladder() {
  using E = EmbeddingMode;
  static const std::array<NamedAblation, 8> ladder = {{
      {"Net0", {false, false, false, E::kNone}},
      {"Net0*", {false, true, true, E::kSat}},
      {"Net1", {true, false, false, E::kAdd}},
      {"Net2", {true, false, false, E::kConcat}},
      {"Net3", {true, false, false, E::kSat}},
      {"Net4", {true, true, false, E::kSat}},
      {"Net5", {true, false, true, E::kSat}},
      {"Net6", {true, true, true, E::kSat}},
  }};
  return ladder;
}

std::string canonical_ablation_name(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "net0star") lower = "net0*";
  for (const auto& row : ablation_ladder()) {
    std::string candidate(row.name);
    std::transform(candidate.begin(), candidate.end(), candidate.begin(), [](unsigned char c) { return std::tolower(c); });
    if (candidate == lower) return row.name;
  }
  throw ValidationError("ablation: unknown configuration '" + std::string(name) + "' (net0, net0*, net1..net6)");
}

AblationConfig ablation_by_name(std::string_view name) {
  const auto canonical = canonical_ablation_name(name);
  for (const auto& row : ablation_ladder())
    if (canonical == row.name) return row.config;
  throw ValidationError("ablation: unknown configuration");
}

}  // namespace trainkit
}  // namespace priorlens
