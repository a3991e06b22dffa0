#include "advtag/config_json.hpp"

#include <algorithm>
#include <string>

#include "advtag/errors.hpp"

namespace advtag {
namespace {

using nlohmann::json;

void reject_unknown(const json& j, std::initializer_list<std::string_view> known,
                    std::initializer_list<std::string_view> extra, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    auto match = [&](std::string_view k) { return k == key; };
    if (std::none_of(known.begin(), known.end(), match) && std::none_of(extra.begin(), extra.end(), match)) {
      throw ConfigError(std::string("unknown key '") + key + "' in " + what);
    }
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

std::string to_string(AttackKind kind) { return kind == AttackKind::Targeted ? "targeted" : "untargeted"; }

AttackKind parse_attack_kind(std::string_view name) {
  if (name == "targeted") return AttackKind::Targeted;
  if (name == "untargeted") return AttackKind::Untargeted;
  throw ConfigError("mode must be 'targeted' or 'untargeted', got '" + std::string(name) + "'");
}

json to_json(const RobustnessConfig& cfg) {
  return {{"jitter", cfg.jitter}, {"erase", cfg.erase}, {"aux_draws", cfg.aux_draws}};
}

json to_json(const AttackConfig& cfg) {
  json j = {{"max_lines", cfg.max_lines},
            {"expansion", cfg.expansion},
            {"prune_interval", cfg.prune_interval},
            {"max_steps", cfg.max_steps},
            {"patience", cfg.patience},
            {"max_resets", cfg.max_resets},
            {"learning_rate", cfg.learning_rate},
            {"mode", to_string(cfg.mode.kind)},
            {"target", cfg.mode.target},
            {"robustness", to_json(cfg.robustness)},
            {"sigma", cfg.sigma},
            {"stop_on_success", cfg.stop_on_success},
            {"seed", cfg.seed}};
  if (cfg.prune_robustness) j["prune_robustness"] = to_json(*cfg.prune_robustness);
  if (cfg.search_bbox) {
    const BoundingBox& b = *cfg.search_bbox;
    j["bbox"] = {b.x0, b.y0, b.x1, b.y1};
  }
  if (cfg.line_length) j["line_length"] = {cfg.line_length->min, cfg.line_length->max};
  return j;
}

RobustnessConfig robustness_from_json(const json& j) {
  reject_unknown(j, {"jitter", "erase", "aux_draws"}, {}, "robustness");
  RobustnessConfig cfg;
  read(j, "jitter", cfg.jitter);
  read(j, "erase", cfg.erase);
  read(j, "aux_draws", cfg.aux_draws);
  return cfg;
}

AttackConfig attack_config_from_json(const json& j, std::initializer_list<std::string_view> extra) {
  reject_unknown(j,
                 {"max_lines", "expansion", "prune_interval", "max_steps", "patience", "max_resets", "learning_rate",
                  "mode", "target", "robustness", "prune_robustness", "bbox", "line_length", "sigma",
                  "stop_on_success", "seed"},
                 extra, "attack config");
  AttackConfig cfg;
  read(j, "max_lines", cfg.max_lines);
  read(j, "expansion", cfg.expansion);
  read(j, "prune_interval", cfg.prune_interval);
  read(j, "max_steps", cfg.max_steps);
  read(j, "patience", cfg.patience);
  read(j, "max_resets", cfg.max_resets);
  read(j, "learning_rate", cfg.learning_rate);
  std::string mode = to_string(cfg.mode.kind);
  read(j, "mode", mode);
  cfg.mode.kind = parse_attack_kind(mode);
  read(j, "target", cfg.mode.target);
  if (j.contains("robustness")) cfg.robustness = robustness_from_json(j.at("robustness"));
  if (j.contains("prune_robustness")) cfg.prune_robustness = robustness_from_json(j.at("prune_robustness"));
  if (j.contains("bbox")) {
    std::vector<float> b;
    read(j, "bbox", b);
    if (b.size() != 4) throw ConfigError("bbox needs 4 numbers");
    cfg.search_bbox = BoundingBox{b[0], b[1], b[2], b[3]};
  }
  if (j.contains("line_length")) {
    std::vector<double> r;
    read(j, "line_length", r);
    if (r.size() != 2) throw ConfigError("line_length needs [min, max]");
    cfg.line_length = LengthRange{r[0], r[1]};
  }
  read(j, "sigma", cfg.sigma);
  read(j, "stop_on_success", cfg.stop_on_success);
  read(j, "seed", cfg.seed);
  return cfg;
}

}  // namespace advtag
