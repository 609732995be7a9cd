#pragma once

// Applies a PrunePlan to a checkpoint and measures the resulting drift.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "topoprune/components.hpp"
#include "topoprune/encoder.hpp"
#include "topoprune/error.hpp"
#include "topoprune/planner.hpp"
#include "topoprune/tensor_store.hpp"

namespace topoprune {

inline std::int64_t count_parameters(const Checkpoint& ckpt) {
  std::int64_t total = 0;
  for (const auto& [name, t] : ckpt.tensors) total += element_count(t.shape);
  return total;
}

inline std::int64_t count_parameters(const TensorStore& store) {
  std::int64_t total = 0;
  for (const auto& [name, e] : store.entries()) total += element_count(e.shape);
  return total;
}

struct SurgeryRecord {
  int layer = 0;
  Component component = Component::kQ;
  int pruned = 0;
  bool compensated = false;
  std::string target_bias;  // empty when no compensation applies
};

struct SurgeryManifest {
  std::map<std::string, std::pair<Shape, Shape>> shapes;  // original -> new
  std::vector<SurgeryRecord> records;
  std::int64_t original_parameters = 0;
  std::int64_t pruned_parameters = 0;

  nlohmann::json to_json() const {
    nlohmann::json tensors = nlohmann::json::object();
    for (const auto& [name, s] : shapes) tensors[name] = {{"original", s.first}, {"new", s.second}};
    nlohmann::json records_json = nlohmann::json::array();
    for (const auto& r : records) {
      records_json.push_back({{"layer", r.layer},
                              {"component", std::string(component_name(r.component))},
                              {"pruned", r.pruned},
                              {"compensated", r.compensated},
                              {"target_bias", r.target_bias}});
    }
    const double ratio = original_parameters == 0
                             ? 1.0
                             : static_cast<double>(pruned_parameters) / static_cast<double>(original_parameters);
    return {{"tensors", tensors},
            {"components", records_json},
            {"parameters", {{"original", original_parameters}, {"pruned", pruned_parameters}, {"ratio", ratio}}}};
  }
};

struct SurgeryResult {
  Checkpoint checkpoint;
  SurgeryManifest manifest;
};

// b += sum_j W[j, :] * c_j over the given input rows of a [in, out] consumer.
inline void fold_compensation(Tensor& bias, const Tensor& consumer, std::span<const int> rows,
                              std::span<const double> constants) {
  require(rows.size() == constants.size(), "fold_compensation: rows and constants differ in length");
  require(consumer.shape.size() == 2 && bias.shape.size() == 1 && bias.shape[0] == consumer.shape[1],
          "fold_compensation: bias does not match consumer output width");
  std::vector<double> acc(bias.data.begin(), bias.data.end());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    require(rows[k] >= 0 && rows[k] < consumer.shape[0], "fold_compensation: row out of range");
    for (std::int64_t o = 0; o < consumer.shape[1]; ++o) acc[static_cast<std::size_t>(o)] += consumer.at(rows[k], o) * constants[k];
  }
  for (std::size_t o = 0; o < acc.size(); ++o) bias.data[o] = static_cast<float>(acc[o]);
}

namespace detail {

inline Tensor drop_columns(const Tensor& t, const std::set<int>& drop) {
  const std::int64_t rows = t.shape[0];
  const std::int64_t cols = t.shape.size() == 2 ? t.shape[1] : t.shape[0];
  const bool vector = t.shape.size() == 1;
  Shape shape = vector ? Shape{cols - static_cast<std::int64_t>(drop.size())}
                       : Shape{rows, cols - static_cast<std::int64_t>(drop.size())};
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(element_count(shape)));
  for (std::int64_t r = 0; r < (vector ? 1 : rows); ++r) {
    for (std::int64_t c = 0; c < cols; ++c) {
      if (!drop.count(static_cast<int>(c))) data.push_back(t.data[static_cast<std::size_t>(r * cols + c)]);
    }
  }
  return Tensor(t.name, shape, std::move(data));
}

inline Tensor drop_rows(const Tensor& t, const std::set<int>& drop) {
  const std::int64_t rows = t.shape[0];
  const std::int64_t cols = t.shape[1];
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>((rows - static_cast<std::int64_t>(drop.size())) * cols));
  for (std::int64_t r = 0; r < rows; ++r) {
    if (drop.count(static_cast<int>(r))) continue;
    data.insert(data.end(), t.data.begin() + r * cols, t.data.begin() + (r + 1) * cols);
  }
  return Tensor(t.name, Shape{rows - static_cast<std::int64_t>(drop.size()), cols}, std::move(data));
}

// Head widths after removing `drop` from a component with the given heads.
inline std::vector<int> shrink_heads(const std::vector<int>& heads, const std::set<int>& drop) {
  std::vector<int> out = heads;
  int offset = 0;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    for (int j = offset; j < offset + heads[h]; ++j) out[h] -= static_cast<int>(drop.count(j));
    offset += heads[h];
  }
  return out;
}

}  // namespace detail

// Removes pruned neurons, reshapes their consumers and folds compensation
// constants into the consumer biases. Q/K neurons are deleted without
// compensation; their outputs feed a bilinear form, not an affine consumer.
inline SurgeryResult apply_plan(const Checkpoint& original, const PrunePlan& plan, bool compensate = true) {
  const EncoderModel model(original);
  const auto& cfg = model.config();

  std::map<std::pair<int, Component>, const PlanEntry*> entries;
  for (const auto& e : plan.entries) {
    require(!is_protected(e.component),
            "apply_plan: " + std::string(component_name(e.component)) + " cannot be pruned");
    require(e.layer >= 1 && e.layer <= cfg.layers,
            "apply_plan: layer " + std::to_string(e.layer) + " not in checkpoint");
    require(entries.emplace(std::make_pair(e.layer, e.component), &e).second,
            "apply_plan: duplicate entry for layer " + std::to_string(e.layer) + " " +
                std::string(component_name(e.component)));
    const int width = model.layer(e.layer).width(e.component);
    require(e.width == width, "apply_plan: plan width " + std::to_string(e.width) + " does not match " +
                                  tensor_name(e.layer, e.component, "weight") + " width " + std::to_string(width));
    for (const int j : e.pruned) {
      require(j >= 0 && j < width, "apply_plan: index " + std::to_string(j) + " out of range for " +
                                       tensor_name(e.layer, e.component, "weight"));
    }
    require(e.compensation.empty() || e.compensation.size() == e.pruned.size(),
            "apply_plan: compensation list does not match pruned list");
  }

  SurgeryResult result;
  result.checkpoint = original;
  Checkpoint& out = result.checkpoint;
  auto pruned_set = [&](int layer, Component c) {
    const auto it = entries.find({layer, c});
    std::set<int> s;
    if (it != entries.end()) s.insert(it->second->pruned.begin(), it->second->pruned.end());
    return s;
  };

  for (int l = 1; l <= cfg.layers; ++l) {
    const auto& lw = model.layer(l);
    const auto q_drop = pruned_set(l, Component::kQ);
    const auto k_drop = pruned_set(l, Component::kK);
    require(q_drop == k_drop, "apply_plan: Q and K pruned sets differ at layer " + std::to_string(l));

    if (!q_drop.empty()) {
      for (const auto c : {Component::kQ, Component::kK}) {
        auto& w = out.get(tensor_name(l, c, "weight"));
        auto& b = out.get(tensor_name(l, c, "bias"));
        w = detail::drop_columns(w, q_drop);
        b = detail::drop_columns(b, q_drop);
      }
      out.metadata[qk_heads_key(l)] = detail::join_ints(detail::shrink_heads(lw.qk_heads, q_drop));
    }

    // Producer whose outputs are consumed through an affine map.
    auto prune_producer = [&](Component producer, Component consumer, const std::vector<int>& heads,
                              const std::string& heads_key) {
      const auto it = entries.find({l, producer});
      if (it == entries.end() || it->second->pruned.empty()) return;
      const PlanEntry& e = *it->second;
      const std::set<int> drop(e.pruned.begin(), e.pruned.end());
      auto& consumer_w = out.get(tensor_name(l, consumer, "weight"));
      auto& consumer_b = out.get(tensor_name(l, consumer, "bias"));
      if (compensate && !e.compensation.empty()) {
        fold_compensation(consumer_b, consumer_w, e.pruned, e.compensation);
      }
      consumer_w = detail::drop_rows(consumer_w, drop);
      auto& w = out.get(tensor_name(l, producer, "weight"));
      auto& b = out.get(tensor_name(l, producer, "bias"));
      w = detail::drop_columns(w, drop);
      b = detail::drop_columns(b, drop);
      if (!heads_key.empty()) out.metadata[heads_key] = detail::join_ints(detail::shrink_heads(heads, drop));
    };
    prune_producer(Component::kV, Component::kAttOutput, lw.v_heads, v_heads_key(l));
    prune_producer(Component::kIntermediate, Component::kOutput, {}, "");
  }

  // Manifest.
  auto& m = result.manifest;
  for (const auto& [name, t] : original.tensors) m.shapes[name] = {t.shape, out.get(name).shape};
  for (const auto& e : plan.entries) {
    SurgeryRecord r;
    r.layer = e.layer;
    r.component = e.component;
    r.pruned = static_cast<int>(e.pruned.size());
    if (!e.pruned.empty() && compensate && !e.compensation.empty()) {
      if (e.component == Component::kV) r.target_bias = tensor_name(e.layer, Component::kAttOutput, "bias");
      if (e.component == Component::kIntermediate) r.target_bias = tensor_name(e.layer, Component::kOutput, "bias");
      r.compensated = !r.target_bias.empty();
    }
    m.records.push_back(std::move(r));
  }
  m.original_parameters = count_parameters(original);
  m.pruned_parameters = count_parameters(out);

  // The result must still run.
  EncoderModel check(out);
  (void)check;
  return result;
}

struct Drift {
  double max_abs = 0.0;
  double mean_abs = 0.0;
};

struct DriftReport {
  Drift final_cls;
  std::vector<Drift> per_layer;

  nlohmann::json to_json() const {
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t i = 0; i < per_layer.size(); ++i) {
      layers.push_back({{"layer", i + 1}, {"max_abs", per_layer[i].max_abs}, {"mean_abs", per_layer[i].mean_abs}});
    }
    return {{"max_abs", final_cls.max_abs}, {"mean_abs", final_cls.mean_abs}, {"layers", layers}};
  }
};

namespace detail {

inline Drift drift(const Tensor& a, const Tensor& b) {
  Drift d;
  if (a.data.empty()) return d;
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double diff = std::abs(static_cast<double>(a.data[i]) - b.data[i]);
    d.max_abs = std::max(d.max_abs, diff);
    sum += diff;
  }
  d.mean_abs = sum / static_cast<double>(a.data.size());
  return d;
}

}  // namespace detail

// Difference of the [CLS] hidden states of two models over one batch.
inline DriftReport verify_surgery(const Checkpoint& original, const Checkpoint& pruned, const TokenBatch& batch) {
  const EncoderModel a(original);
  const EncoderModel b(pruned);
  require(a.config().hidden == b.config().hidden && a.config().layers == b.config().layers &&
              a.config().heads == b.config().heads,
          "verify: checkpoints have incompatible shapes");
  const auto ra = forward(a, batch, false);
  const auto rb = forward(b, batch, false);
  DriftReport report;
  report.final_cls = detail::drift(ra.cls_hidden, rb.cls_hidden);
  for (std::size_t l = 0; l < ra.layer_cls.size(); ++l) {
    report.per_layer.push_back(detail::drift(ra.layer_cls[l], rb.layer_cls[l]));
  }
  return report;
}

}  // namespace topoprune
