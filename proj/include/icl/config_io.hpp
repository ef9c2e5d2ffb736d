#pragma once

// JSON (de)serialization for the config structs, with strict unknown-key
// rejection so typos in shift parameters fail loudly instead of silently
// falling back to defaults.

#include <initializer_list>
#include <set>
#include <string>

#include <json.hpp>

#include "icl/errors.hpp"
#include "icl/models.hpp"
#include "icl/taskgen.hpp"

namespace icl {

using nlohmann::json;

inline void json_require_keys(const json& obj, std::initializer_list<const char*> allowed,
                              const std::string& scope) {
  if (!obj.is_object()) throw ConfigError(scope + ": expected a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!ok.count(it.key())) throw ConfigError(scope + ": unknown key '" + it.key() + "'");
  }
}

template <typename T>
void json_get(const json& obj, const char* key, T& out, const std::string& scope) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(scope + "." + key + ": wrong type");
  }
}

// ---- TaskConfig -------------------------------------------------------------

inline json task_to_json(const TaskConfig& c) {
  return json{{"d", c.d}, {"mu", c.mu}, {"sigma", c.sigma}, {"k", c.k}};
}

inline TaskConfig task_from_json(const json& j, const std::string& scope = "task") {
  json_require_keys(j, {"d", "mu", "sigma", "k"}, scope);
  TaskConfig c;
  json_get(j, "d", c.d, scope);
  json_get(j, "mu", c.mu, scope);
  json_get(j, "sigma", c.sigma, scope);
  json_get(j, "k", c.k, scope);
  c.validate();
  return c;
}

// ---- ModelConfig --------------------------------------------------------------

inline Arch arch_from_string(const std::string& s) {
  if (s == "transformer") return Arch::Transformer;
  if (s == "deepset") return Arch::DeepSet;
  throw ConfigError("model.arch: expected 'transformer' or 'deepset', got '" + s + "'");
}

inline PeMode pe_mode_from_string(const std::string& s) {
  if (s == "learned") return PeMode::Learned;
  if (s == "identical") return PeMode::Identical;
  throw ConfigError("model.pe_mode: expected 'learned' or 'identical', got '" + s + "'");
}

inline MaskMode mask_mode_from_string(const std::string& s) {
  if (s == "causal") return MaskMode::Causal;
  if (s == "bidirectional_demos") return MaskMode::BidirectionalDemos;
  throw ConfigError("model.mask_mode: expected 'causal' or 'bidirectional_demos', got '" + s + "'");
}

inline json model_to_json(const ModelConfig& c) {
  return json{{"arch", to_string(c.arch)},
              {"pe_mode", to_string(c.pe_mode)},
              {"mask_mode", to_string(c.mask_mode)},
              {"n_layers", c.n_layers},
              {"n_heads", c.n_heads},
              {"hidden_dim", c.hidden_dim},
              {"max_positions", c.max_positions},
              {"d", c.d},
              {"deepset_width", c.deepset_width},
              {"deepset_depth", c.deepset_depth}};
}

inline ModelConfig model_from_json(const json& j, const std::string& scope = "model") {
  json_require_keys(j,
                    {"arch", "pe_mode", "mask_mode", "n_layers", "n_heads", "hidden_dim",
                     "max_positions", "d", "deepset_width", "deepset_depth"},
                    scope);
  ModelConfig c;
  std::string arch = to_string(c.arch), pe = to_string(c.pe_mode), mask = to_string(c.mask_mode);
  json_get(j, "arch", arch, scope);
  json_get(j, "pe_mode", pe, scope);
  json_get(j, "mask_mode", mask, scope);
  c.arch = arch_from_string(arch);
  c.pe_mode = pe_mode_from_string(pe);
  c.mask_mode = mask_mode_from_string(mask);
  json_get(j, "n_layers", c.n_layers, scope);
  json_get(j, "n_heads", c.n_heads, scope);
  json_get(j, "hidden_dim", c.hidden_dim, scope);
  json_get(j, "max_positions", c.max_positions, scope);
  json_get(j, "d", c.d, scope);
  json_get(j, "deepset_width", c.deepset_width, scope);
  json_get(j, "deepset_depth", c.deepset_depth, scope);
  c.validate();
  return c;
}

}  // namespace icl
