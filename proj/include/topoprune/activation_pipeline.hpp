#pragma once

// Per-neuron r_f scores from an activation dump, and their per-(layer,
// component) distributions.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "topoprune/components.hpp"
#include "topoprune/error.hpp"
#include "topoprune/parallel.hpp"
#include "topoprune/tensor_store.hpp"
#include "topoprune/zero_ph.hpp"

namespace topoprune {

struct NeuronScore {
  int layer = 0;
  Component component = Component::kQ;
  int neuron = 0;
  double r_f = 0.0;
  double mean = 0.0;
  double std = 0.0;  // population
  // Statistics of the value entering the consumer (V context, post-GELU
  // Intermediate), when the dump carries it.
  std::optional<double> consumed_mean;
  std::optional<double> consumed_std;

  // Constant folded into the consumer bias if this neuron is pruned.
  double compensation() const {
    if (consumed_mean && consumed_std) return *consumed_mean + *consumed_std;
    return mean + std;
  }

  friend bool operator==(const NeuronScore&, const NeuronScore&) = default;
};

// Mean and population standard deviation.
inline std::pair<double, double> mean_and_std(const std::vector<double>& values) {
  double mean = 0.0;
  for (const double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (const double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return {mean, std::sqrt(var)};
}

// Linear interpolation between closest ranks on the ascending sort,
// rank = (p/100)(n-1).
inline double percentile(std::vector<double> values, double p) {
  require(!values.empty(), "percentile of an empty set");
  require(p >= 0.0 && p <= 100.0, "percentile must be in [0, 100]");
  std::sort(values.begin(), values.end());
  const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

// An activation dump: act.layer.{l}.{component} for every layer and component.
struct ActivationDump {
  int layers = 0;
  std::size_t rows = 0;
  std::map<std::pair<int, Component>, Tensor> acts;
  std::map<std::pair<int, Component>, Tensor> consumed;

  const Tensor& at(int layer, Component c) const {
    const auto it = acts.find({layer, c});
    require(it != acts.end(), "activation dump: missing " + activation_name(layer, c));
    return it->second;
  }
};

// Checks names, shapes and finiteness; accepts dumps from any producer that
// follows the naming scheme.
inline ActivationDump validate_dump(const Checkpoint& ckpt) {
  ActivationDump dump;
  int max_layer = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    const bool is_act = name.rfind("act.layer.", 0) == 0;
    const bool is_consumed = name.rfind("consumed.layer.", 0) == 0;
    if (!is_act && !is_consumed) continue;
    const std::string rest = name.substr(is_act ? 10 : 15);
    const auto dot = rest.find('.');
    require(dot != std::string::npos, "activation dump: malformed tensor name '" + name + "'");
    int layer = 0;
    try {
      std::size_t used = 0;
      layer = std::stoi(rest.substr(0, dot), &used);
      require(used == dot, "");
    } catch (...) {
      fail("activation dump: malformed layer in '" + name + "'");
    }
    require(layer >= 1, "activation dump: layers are numbered from 1 ('" + name + "')");
    const Component c = parse_component(rest.substr(dot + 1));
    require(t.shape.size() == 2, "activation dump: '" + name + "' is not a matrix");
    for (const float v : t.data) {
      require(std::isfinite(v), "activation dump: non-finite value in '" + name + "'");
    }
    if (is_act) {
      dump.acts.emplace(std::make_pair(layer, c), t);
      max_layer = std::max(max_layer, layer);
    } else {
      require(c == Component::kV || c == Component::kIntermediate,
              "activation dump: unexpected consumed tensor '" + name + "'");
      dump.consumed.emplace(std::make_pair(layer, c), t);
    }
  }
  require(!dump.acts.empty(), "activation dump: no act.layer.* tensors");
  dump.layers = max_layer;
  dump.rows = static_cast<std::size_t>(dump.acts.begin()->second.shape[0]);
  require(dump.rows >= 1, "activation dump: needs at least one row");
  for (int l = 1; l <= dump.layers; ++l) {
    for (const auto c : kAllComponents) {
      const auto& t = dump.at(l, c);
      require(static_cast<std::size_t>(t.shape[0]) == dump.rows,
              "activation dump: row count differs in " + activation_name(l, c));
    }
    const auto hidden = dump.at(l, Component::kQ).shape[1];
    for (const auto c : {Component::kK, Component::kV, Component::kAttOutput, Component::kOutput}) {
      require(dump.at(l, c).shape[1] == hidden,
              "activation dump: " + activation_name(l, c) + " width differs from the hidden size");
    }
  }
  for (const auto& [key, t] : dump.consumed) {
    require(key.first <= dump.layers, "activation dump: consumed tensor for unknown layer");
    require(t.shape == dump.at(key.first, key.second).shape,
            "activation dump: " + consumed_name(key.first, key.second) + " shape mismatch");
  }
  return dump;
}

inline ActivationDump read_dump(const std::filesystem::path& path) {
  return validate_dump(read_checkpoint(path));
}

namespace detail {

inline std::vector<double> column(const Tensor& t, std::int64_t j) {
  std::vector<double> out(static_cast<std::size_t>(t.rows()));
  for (std::int64_t r = 0; r < t.rows(); ++r) out[static_cast<std::size_t>(r)] = t.at(r, j);
  return out;
}

}  // namespace detail

// One score per neuron, ordered by (layer, component, neuron). Neurons are
// scored in parallel; the output order does not depend on scheduling.
inline std::vector<NeuronScore> score_neurons(const ActivationDump& dump) {
  struct Job {
    const Tensor* acts;
    const Tensor* consumed;
    int layer;
    Component component;
    int neuron;
  };
  std::vector<Job> jobs;
  for (int l = 1; l <= dump.layers; ++l) {
    for (const auto c : kAllComponents) {
      const Tensor& t = dump.at(l, c);
      const auto it = dump.consumed.find({l, c});
      const Tensor* consumed = it == dump.consumed.end() ? nullptr : &it->second;
      for (std::int64_t j = 0; j < t.cols(); ++j) jobs.push_back({&t, consumed, l, c, static_cast<int>(j)});
    }
  }
  std::vector<NeuronScore> scores(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t i) {
    const Job& job = jobs[i];
    const auto values = detail::column(*job.acts, job.neuron);
    NeuronScore& s = scores[i];
    s.layer = job.layer;
    s.component = job.component;
    s.neuron = job.neuron;
    s.r_f = zero_persistence_1d(values).r_f;
    std::tie(s.mean, s.std) = mean_and_std(values);
    if (job.consumed) {
      const auto [m, sd] = mean_and_std(detail::column(*job.consumed, job.neuron));
      s.consumed_mean = m;
      s.consumed_std = sd;
    }
  });
  return scores;
}

inline constexpr int kLevelPercents[] = {30, 50, 70};

struct RfDistribution {
  int layer = 0;
  Component component = Component::kQ;
  std::vector<NeuronScore> scores;  // ordered by neuron index
  double median_rf = 0.0;
  std::map<int, double> percentiles;  // 30, 50, 70

  std::vector<double> rf_values() const {
    std::vector<double> out;
    out.reserve(scores.size());
    for (const auto& s : scores) out.push_back(s.r_f);
    return out;
  }
};

inline std::vector<RfDistribution> summarize(const std::vector<NeuronScore>& scores) {
  std::map<std::pair<int, Component>, RfDistribution> groups;
  for (const auto& s : scores) {
    auto& g = groups[{s.layer, s.component}];
    g.layer = s.layer;
    g.component = s.component;
    g.scores.push_back(s);
  }
  std::vector<RfDistribution> out;
  for (auto& [key, g] : groups) {
    require(!g.scores.empty(), "summarize: empty group");
    std::sort(g.scores.begin(), g.scores.end(),
              [](const auto& a, const auto& b) { return a.neuron < b.neuron; });
    const auto values = g.rf_values();
    for (const int p : kLevelPercents) g.percentiles[p] = percentile(values, p);
    g.median_rf = g.percentiles[50];
    out.push_back(std::move(g));
  }
  return out;
}

// --- reports ---------------------------------------------------------------------

namespace detail {

inline std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string short_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

// layer,component,median_rf,p30,p50,p70
inline std::string rf_csv(const std::vector<RfDistribution>& distributions) {
  std::string out = "layer,component,median_rf,p30,p50,p70\n";
  for (const auto& d : distributions) {
    out += std::to_string(d.layer) + "," + std::string(component_name(d.component)) + "," +
           detail::short_value(d.median_rf) + "," + detail::short_value(d.percentiles.at(30)) + "," +
           detail::short_value(d.percentiles.at(50)) + "," + detail::short_value(d.percentiles.at(70)) + "\n";
  }
  return out;
}

// Per-neuron scores at full precision, so plans built from the file match
// plans built in memory.
inline std::string neuron_csv(const std::vector<NeuronScore>& scores) {
  std::string out = "layer,component,neuron,r_f,mean,std,consumed_mean,consumed_std\n";
  for (const auto& s : scores) {
    out += std::to_string(s.layer) + "," + std::string(component_name(s.component)) + "," +
           std::to_string(s.neuron) + "," + detail::exact(s.r_f) + "," + detail::exact(s.mean) + "," +
           detail::exact(s.std) + "," + (s.consumed_mean ? detail::exact(*s.consumed_mean) : "") + "," +
           (s.consumed_std ? detail::exact(*s.consumed_std) : "") + "\n";
  }
  return out;
}

inline std::vector<NeuronScore> parse_neuron_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "neuron scores: empty file");
  require(line.rfind("layer,component,neuron,r_f,mean,std", 0) == 0, "neuron scores: unexpected header");
  std::vector<NeuronScore> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    require(fields.size() == 6 || fields.size() == 8,
            "neuron scores line " + std::to_string(line_no) + ": expected 6 or 8 fields");
    NeuronScore s;
    try {
      s.layer = std::stoi(fields[0]);
      s.component = parse_component(fields[1]);
      s.neuron = std::stoi(fields[2]);
      s.r_f = std::stod(fields[3]);
      s.mean = std::stod(fields[4]);
      s.std = std::stod(fields[5]);
      if (fields.size() == 8 && !fields[6].empty()) s.consumed_mean = std::stod(fields[6]);
      if (fields.size() == 8 && !fields[7].empty()) s.consumed_std = std::stod(fields[7]);
    } catch (const Error&) {
      throw;
    } catch (...) {
      fail("neuron scores line " + std::to_string(line_no) + ": malformed number");
    }
    require(s.r_f >= 0.0 && s.std >= 0.0 && s.neuron >= 0,
            "neuron scores line " + std::to_string(line_no) + ": negative r_f, std or index");
    out.push_back(std::move(s));
  }
  return out;
}

// Line chart of median r_f per layer, one series per component.
inline std::string medians_svg(const std::vector<RfDistribution>& distributions) {
  constexpr double kWidth = 640, kHeight = 400, kLeft = 60, kRight = 150, kTop = 30, kBottom = 50;
  constexpr const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};
  int max_layer = 1;
  double max_median = 0.0;
  for (const auto& d : distributions) {
    max_layer = std::max(max_layer, d.layer);
    max_median = std::max(max_median, d.median_rf);
  }
  if (max_median <= 0.0) max_median = 1.0;
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  auto x_of = [&](int layer) {
    return max_layer == 1 ? kLeft + plot_w / 2 : kLeft + plot_w * (layer - 1) / (max_layer - 1);
  };
  auto y_of = [&](double v) { return kTop + plot_h * (1.0 - v / max_median); };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
  };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
                    "font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  svg += "<text x=\"" + num(kLeft) + "\" y=\"18\">Median r_f per layer</text>\n";
  svg += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop + plot_h) + "\" x2=\"" + num(kLeft + plot_w) +
         "\" y2=\"" + num(kTop + plot_h) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop) + "\" x2=\"" + num(kLeft) + "\" y2=\"" +
         num(kTop + plot_h) + "\" stroke=\"black\"/>\n";
  for (int l = 1; l <= max_layer; ++l) {
    svg += "<text x=\"" + num(x_of(l)) + "\" y=\"" + num(kTop + plot_h + 18) +
           "\" text-anchor=\"middle\">" + std::to_string(l) + "</text>\n";
  }
  for (int i = 0; i <= 4; ++i) {
    const double v = max_median * i / 4.0;
    svg += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(y_of(v) + 4) + "\" text-anchor=\"end\">" +
           detail::short_value(v) + "</text>\n";
  }
  svg += "<text x=\"" + num(kLeft + plot_w / 2) + "\" y=\"" + num(kHeight - 10) +
         "\" text-anchor=\"middle\">Layer</text>\n";

  int series = 0;
  for (const auto c : kAllComponents) {
    std::string points;
    for (const auto& d : distributions) {
      if (d.component != c) continue;
      if (!points.empty()) points += ' ';
      points += num(x_of(d.layer)) + "," + num(y_of(d.median_rf));
    }
    const char* color = kColors[series];
    if (!points.empty()) {
      svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"" +
             points + "\"/>\n";
    }
    const double ly = kTop + 16.0 * series;
    svg += "<line x1=\"" + num(kWidth - kRight + 10) + "\" y1=\"" + num(ly) + "\" x2=\"" +
           num(kWidth - kRight + 30) + "\" y2=\"" + num(ly) + "\" stroke=\"" + color +
           "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + num(kWidth - kRight + 36) + "\" y=\"" + num(ly + 4) + "\">" +
           std::string(component_name(c)) + "</text>\n";
    ++series;
  }
  svg += "</svg>\n";
  return svg;
}

// Writes rf.csv, neurons.csv and medians.svg into `dir`.
inline void export_report(const std::vector<RfDistribution>& distributions, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create '" + dir.string() + "'");
  std::vector<NeuronScore> all;
  for (const auto& d : distributions) all.insert(all.end(), d.scores.begin(), d.scores.end());
  detail::write_text(dir / "rf.csv", rf_csv(distributions));
  detail::write_text(dir / "neurons.csv", neuron_csv(all));
  detail::write_text(dir / "medians.svg", medians_svg(distributions));
}

}  // namespace topoprune
