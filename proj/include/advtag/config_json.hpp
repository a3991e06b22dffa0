#pragma once

#include <nlohmann/json.hpp>

#include "advtag/optimizer.hpp"

namespace advtag {

// JSON schema shared by tag files and experiment specs. Keys:
//   max_lines, expansion, prune_interval, max_steps, patience, max_resets,
//   learning_rate, mode ("untargeted" | "targeted"), target,
//   robustness {jitter, erase, aux_draws}, prune_robustness {...},
//   bbox [x0, y0, x1, y1], line_length [min, max], sigma,
//   stop_on_success, seed
// Missing keys keep their defaults; unknown keys are rejected.
nlohmann::json to_json(const RobustnessConfig& cfg);
nlohmann::json to_json(const AttackConfig& cfg);

RobustnessConfig robustness_from_json(const nlohmann::json& j);
// `extra` lists additional keys the caller handles itself.
AttackConfig attack_config_from_json(const nlohmann::json& j, std::initializer_list<std::string_view> extra = {});

std::string to_string(AttackKind kind);
AttackKind parse_attack_kind(std::string_view name);

}  // namespace advtag
