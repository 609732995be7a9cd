#pragma once

#include <array>
#include <string>
#include <string_view>

#include "topoprune/error.hpp"

namespace topoprune {

// The six affine sub-blocks of an encoder layer.
enum class Component { kQ, kK, kV, kAttOutput, kIntermediate, kOutput };

inline constexpr std::array<Component, 6> kAllComponents = {
    Component::kQ,         Component::kK,            Component::kV,
    Component::kAttOutput, Component::kIntermediate, Component::kOutput};

inline constexpr std::string_view component_name(Component c) {
  switch (c) {
    case Component::kQ: return "Q";
    case Component::kK: return "K";
    case Component::kV: return "V";
    case Component::kAttOutput: return "AttOutput";
    case Component::kIntermediate: return "Intermediate";
    case Component::kOutput: return "Output";
  }
  return "?";
}

inline Component parse_component(std::string_view name) {
  for (const auto c : kAllComponents) {
    if (component_name(c) == name) return c;
  }
  fail("unknown component '" + std::string(name) + "'");
}

inline constexpr bool is_attention(Component c) {
  return c == Component::kQ || c == Component::kK || c == Component::kV;
}

// AttOutput and Output feed a residual + LayerNorm and are never pruned.
inline constexpr bool is_protected(Component c) {
  return c == Component::kAttOutput || c == Component::kOutput;
}

// Layers are numbered from 1.
inline std::string tensor_name(int layer, Component c, std::string_view suffix) {
  return "layer." + std::to_string(layer) + "." + std::string(component_name(c)) + "." +
         std::string(suffix);
}

inline std::string activation_name(int layer, Component c) {
  return "act.layer." + std::to_string(layer) + "." + std::string(component_name(c));
}

// Values actually entering the consumer of V / Intermediate.
inline std::string consumed_name(int layer, Component c) {
  return "consumed.layer." + std::to_string(layer) + "." + std::string(component_name(c));
}

}  // namespace topoprune
