#pragma once

// Pruning plans: which neurons of which (layer, component) are removed, and
// the constant each removed neuron leaves behind in its consumer's bias.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "topoprune/activation_pipeline.hpp"
#include "topoprune/components.hpp"
#include "topoprune/encoder.hpp"
#include "topoprune/error.hpp"

namespace topoprune {

enum class Level { kNone, kP30, kP50, kP70 };

inline std::string_view level_name(Level l) {
  switch (l) {
    case Level::kNone: return "None";
    case Level::kP30: return "P30";
    case Level::kP50: return "P50";
    case Level::kP70: return "P70";
  }
  return "?";
}

inline Level parse_level(std::string_view s) {
  for (const auto l : {Level::kNone, Level::kP30, Level::kP50, Level::kP70}) {
    if (level_name(l) == s) return l;
  }
  fail("unknown pruning level '" + std::string(s) + "' (expected P30|P50|P70|None)");
}

inline double default_percent(Level l) {
  switch (l) {
    case Level::kP30: return 30.0;
    case Level::kP50: return 50.0;
    case Level::kP70: return 70.0;
    case Level::kNone: break;
  }
  return 0.0;
}

// Pruning is never applied before this layer.
inline constexpr int kFirstPrunableLayer = 3;

// Level per (layer, component). Enforces the structural rules on every
// write: AttOutput/Output and layers 1-2 stay unpruned, Q and K share a level.
class LevelAssignment {
 public:
  void set(int layer, Component c, Level level) {
    require(layer >= 1, "assignment: layers are numbered from 1");
    if (level != Level::kNone) {
      require(!is_protected(c), "assignment: " + std::string(component_name(c)) +
                                    " feeds a residual LayerNorm and cannot be pruned");
      require(layer >= kFirstPrunableLayer,
              "assignment: layer " + std::to_string(layer) + " precedes the first prunable layer");
    }
    if (c == Component::kQ || c == Component::kK) {
      levels_[{layer, Component::kQ}] = level;
      levels_[{layer, Component::kK}] = level;
    } else {
      levels_[{layer, c}] = level;
    }
  }

  Level get(int layer, Component c) const {
    const auto it = levels_.find({layer, c});
    return it == levels_.end() ? Level::kNone : it->second;
  }

  const std::map<std::pair<int, Component>, Level>& levels() const noexcept { return levels_; }

 private:
  std::map<std::pair<int, Component>, Level> levels_;
};

enum class Arch { kBase, kLarge };

inline Arch parse_arch(std::string_view s) {
  if (s == "base") return Arch::kBase;
  if (s == "large") return Arch::kLarge;
  fail("unknown architecture '" + std::string(s) + "' (expected base|large)");
}

inline EncoderConfig arch_config(Arch arch) {
  return arch == Arch::kBase ? EncoderConfig::bert_base() : EncoderConfig::bert_large();
}

namespace detail {

inline void assign_range(LevelAssignment& a, Component c, Level level, int first, int last) {
  for (int l = first; l <= last; ++l) a.set(l, c, level);
}

}  // namespace detail

// The published per-layer levels for the two reference architectures.
inline LevelAssignment default_assignment(Arch arch) {
  using C = Component;
  using L = Level;
  LevelAssignment a;
  auto r = [&a](C c, L level, int first, int last) { detail::assign_range(a, c, level, first, last); };
  if (arch == Arch::kBase) {
    // Q and K
    r(C::kQ, L::kP30, 3, 4);
    r(C::kQ, L::kP30, 11, 12);
    r(C::kQ, L::kP50, 8, 10);
    r(C::kQ, L::kP70, 5, 7);
    // V
    r(C::kV, L::kP30, 4, 4);
    r(C::kV, L::kP50, 3, 3);
    r(C::kV, L::kP50, 11, 12);
    r(C::kV, L::kP70, 5, 10);
    // Intermediate
    r(C::kIntermediate, L::kP30, 3, 4);
    r(C::kIntermediate, L::kP30, 10, 12);
    r(C::kIntermediate, L::kP50, 5, 9);
  } else {
    // Layer 13 is listed under both P30 (11-17) and P70; the P70 entry wins.
    r(C::kQ, L::kP30, 11, 17);
    r(C::kQ, L::kP50, 4, 10);
    r(C::kQ, L::kP50, 18, 18);
    r(C::kQ, L::kP70, 3, 3);
    r(C::kQ, L::kP70, 13, 13);
    r(C::kQ, L::kP70, 19, 24);

    r(C::kV, L::kP50, 4, 4);
    r(C::kV, L::kP50, 9, 12);
    r(C::kV, L::kP50, 14, 17);
    r(C::kV, L::kP70, 3, 3);
    r(C::kV, L::kP70, 5, 8);
    r(C::kV, L::kP70, 13, 13);
    r(C::kV, L::kP70, 18, 24);

    r(C::kIntermediate, L::kP30, 3, 4);
    r(C::kIntermediate, L::kP30, 8, 16);
    r(C::kIntermediate, L::kP30, 18, 18);
    r(C::kIntermediate, L::kP50, 5, 7);
    r(C::kIntermediate, L::kP50, 17, 17);
    r(C::kIntermediate, L::kP50, 19, 24);
  }
  return a;
}

// JSON array of {"layer": int, "component": str, "level": str}. A Q entry
// and a K entry for the same layer must agree.
inline LevelAssignment parse_assignment(const nlohmann::json& j) {
  require(j.is_array(), "assignment file: expected a JSON array");
  std::map<int, Level> qk;
  LevelAssignment a;
  for (const auto& item : j) {
    int layer = 0;
    std::string comp;
    std::string level;
    try {
      layer = item.at("layer").get<int>();
      comp = item.at("component").get<std::string>();
      level = item.at("level").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      fail(std::string("assignment file: ") + e.what());
    }
    const Component c = parse_component(comp);
    const Level l = parse_level(level);
    if (c == Component::kQ || c == Component::kK) {
      const auto [it, inserted] = qk.emplace(layer, l);
      require(inserted || it->second == l,
              "assignment file: Q and K disagree at layer " + std::to_string(layer));
    }
    a.set(layer, c, l);
  }
  return a;
}

inline nlohmann::json assignment_to_json(const LevelAssignment& a) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& [key, level] : a.levels()) {
    out.push_back({{"layer", key.first},
                   {"component", std::string(component_name(key.second))},
                   {"level", std::string(level_name(level))}});
  }
  return out;
}

struct PlanEntry {
  int layer = 0;
  Component component = Component::kQ;
  Level level = Level::kNone;
  int width = 0;
  std::vector<int> pruned;           // ascending
  std::vector<double> compensation;  // parallel to `pruned`
  std::vector<int> head_sizes;       // retained width per head (Q/K/V only)

  int retained() const { return width - static_cast<int>(pruned.size()); }

  friend bool operator==(const PlanEntry&, const PlanEntry&) = default;
};

struct PrunePlan {
  std::vector<PlanEntry> entries;  // ordered by (layer, component)

  const PlanEntry* find(int layer, Component c) const {
    for (const auto& e : entries) {
      if (e.layer == layer && e.component == c) return &e;
    }
    return nullptr;
  }
};

struct PlanOptions {
  std::map<Level, double> percents = {{Level::kP30, 30.0}, {Level::kP50, 50.0}, {Level::kP70, 70.0}};
  // Apply the component-wide percentile cut to Q/K/V instead of the
  // balanced per-head rule. Heads may then end up with different widths.
  bool global_percentile = false;
};

namespace detail {

// Neurons with r_f at or below the p-th percentile.
inline std::vector<int> prune_by_percentile(const std::vector<NeuronScore>& scores, double p) {
  std::vector<double> values;
  for (const auto& s : scores) values.push_back(s.r_f);
  const double threshold = percentile(values, p);
  std::vector<int> out;
  for (const auto& s : scores) {
    if (s.r_f <= threshold) out.push_back(s.neuron);
  }
  return out;
}

// In every head, the floor(p/100 * head_width) lowest-r_f neurons; ties go
// to the lower index.
inline std::vector<int> prune_per_head(const std::vector<NeuronScore>& scores, int head_count, double p) {
  const int width = static_cast<int>(scores.size());
  const int head_width = width / head_count;
  const auto drop = static_cast<int>(std::floor(p * head_width / 100.0));
  std::vector<int> out;
  for (int h = 0; h < head_count; ++h) {
    std::vector<const NeuronScore*> head;
    for (int j = h * head_width; j < (h + 1) * head_width; ++j) head.push_back(&scores[static_cast<std::size_t>(j)]);
    std::stable_sort(head.begin(), head.end(), [](const NeuronScore* a, const NeuronScore* b) {
      return a->r_f < b->r_f || (a->r_f == b->r_f && a->neuron < b->neuron);
    });
    for (int k = 0; k < drop; ++k) out.push_back(head[static_cast<std::size_t>(k)]->neuron);
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<int> head_sizes_after(const std::vector<int>& pruned, int width, int head_count) {
  const int head_width = width / head_count;
  std::vector<int> sizes(static_cast<std::size_t>(head_count), head_width);
  for (const int j : pruned) --sizes[static_cast<std::size_t>(j / head_width)];
  return sizes;
}

}  // namespace detail

inline PrunePlan build_plan(const std::vector<RfDistribution>& distributions, const LevelAssignment& assignment,
                            int head_count, const PlanOptions& options = {}) {
  require(head_count >= 1, "build_plan: head count must be >= 1");
  std::map<std::pair<int, Component>, const RfDistribution*> by_key;
  int max_layer = 0;
  for (const auto& d : distributions) {
    by_key[{d.layer, d.component}] = &d;
    max_layer = std::max(max_layer, d.layer);
  }
  for (const auto& [key, level] : assignment.levels()) {
    if (level == Level::kNone) continue;
    const Component source = key.second == Component::kK ? Component::kQ : key.second;
    require(by_key.count({key.first, source}) != 0,
            "build_plan: no r_f distribution for layer " + std::to_string(key.first) + " " +
                std::string(component_name(source)));
  }

  PrunePlan plan;
  for (int layer = 1; layer <= max_layer; ++layer) {
    for (const auto c : {Component::kQ, Component::kK, Component::kV, Component::kIntermediate}) {
      const auto it = by_key.find({layer, c});
      const Component source = c == Component::kK ? Component::kQ : c;
      const auto src = by_key.find({layer, source});
      if (it == by_key.end() && src == by_key.end()) continue;
      const RfDistribution& own = *(it != by_key.end() ? it->second : src->second);

      PlanEntry entry;
      entry.layer = layer;
      entry.component = c;
      entry.level = assignment.get(layer, c);
      entry.width = static_cast<int>(own.scores.size());
      for (std::size_t j = 0; j < own.scores.size(); ++j) {
        require(own.scores[j].neuron == static_cast<int>(j),
                "build_plan: neuron indices of layer " + std::to_string(layer) + " " +
                    std::string(component_name(c)) + " are not contiguous");
      }
      if (is_attention(c)) {
        require(entry.width % head_count == 0,
                "build_plan: head count " + std::to_string(head_count) + " does not divide width " +
                    std::to_string(entry.width) + " of layer " + std::to_string(layer) + " " +
                    std::string(component_name(c)));
      }

      if (entry.level != Level::kNone && layer >= kFirstPrunableLayer) {
        require(src != by_key.end(), "build_plan: missing Q distribution for layer " + std::to_string(layer));
        const auto& driver = src->second->scores;
        require(static_cast<int>(driver.size()) == entry.width, "build_plan: Q and K widths differ");
        const double p = options.percents.at(entry.level);
        if (is_attention(c) && !options.global_percentile) {
          entry.pruned = detail::prune_per_head(driver, head_count, p);
        } else {
          entry.pruned = detail::prune_by_percentile(driver, p);
        }
        for (const int j : entry.pruned) {
          entry.compensation.push_back(own.scores[static_cast<std::size_t>(j)].compensation());
        }
      }
      if (is_attention(c)) entry.head_sizes = detail::head_sizes_after(entry.pruned, entry.width, head_count);
      plan.entries.push_back(std::move(entry));
    }
  }
  return plan;
}

struct ParameterReport {
  std::int64_t original = 0;
  std::int64_t pruned = 0;
  double ratio = 1.0;
};

inline std::int64_t count_shape_parameters(const EncoderConfig& cfg) {
  std::int64_t total = 0;
  for (const auto& [name, shape] : model_shapes(cfg)) total += element_count(shape);
  return total;
}

// Exact parameter counts before and after applying the plan, embeddings and
// pooler included. Each pruned Q/K neuron removes a weight column and a bias
// entry; each pruned V/Intermediate neuron additionally removes the matching
// input row of its consumer.
inline ParameterReport plan_parameter_report(const PrunePlan& plan, const EncoderConfig& cfg) {
  ParameterReport report;
  report.original = count_shape_parameters(cfg);
  std::int64_t removed = 0;
  for (const auto& e : plan.entries) {
    require(e.layer >= 1 && e.layer <= cfg.layers, "parameter report: plan layer outside the architecture");
    const std::int64_t expected_width = e.component == Component::kIntermediate ? cfg.intermediate : cfg.hidden;
    require(e.width == expected_width, "parameter report: plan width does not match the architecture");
    const auto n = static_cast<std::int64_t>(e.pruned.size());
    const std::int64_t per_neuron = is_attention(e.component) && e.component != Component::kV
                                        ? cfg.hidden + 1
                                        : 2 * std::int64_t{cfg.hidden} + 1;
    removed += n * per_neuron;
  }
  report.pruned = report.original - removed;
  report.ratio = static_cast<double>(report.pruned) / static_cast<double>(report.original);
  return report;
}

// --- plan files -------------------------------------------------------------------

inline nlohmann::json plan_to_json(const PrunePlan& plan, const std::optional<EncoderConfig>& cfg) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : plan.entries) {
    nlohmann::json j = {{"layer", e.layer},
                        {"component", std::string(component_name(e.component))},
                        {"level", std::string(level_name(e.level))},
                        {"width", e.width},
                        {"retained", e.retained()},
                        {"pruned", e.pruned},
                        {"compensation", e.compensation}};
    if (!e.head_sizes.empty()) j["head_sizes"] = e.head_sizes;
    entries.push_back(std::move(j));
  }
  nlohmann::json out = {{"entries", entries}};
  if (cfg) {
    const auto report = plan_parameter_report(plan, *cfg);
    out["config"] = cfg->to_json();
    out["parameters"] = {{"original", report.original}, {"pruned", report.pruned}, {"ratio", report.ratio}};
  }
  return out;
}

inline PrunePlan plan_from_json(const nlohmann::json& j) {
  PrunePlan plan;
  try {
    for (const auto& item : j.at("entries")) {
      PlanEntry e;
      e.layer = item.at("layer").get<int>();
      e.component = parse_component(item.at("component").get<std::string>());
      e.level = parse_level(item.at("level").get<std::string>());
      e.width = item.at("width").get<int>();
      e.pruned = item.at("pruned").get<std::vector<int>>();
      e.compensation = item.at("compensation").get<std::vector<double>>();
      if (item.contains("head_sizes")) e.head_sizes = item.at("head_sizes").get<std::vector<int>>();
      require(e.compensation.empty() || e.compensation.size() == e.pruned.size(),
              "plan file: compensation list does not match pruned list");
      require(std::is_sorted(e.pruned.begin(), e.pruned.end()) &&
                  std::adjacent_find(e.pruned.begin(), e.pruned.end()) == e.pruned.end(),
              "plan file: pruned indices must be strictly ascending");
      plan.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("plan file: ") + e.what());
  }
  return plan;
}

}  // namespace topoprune
