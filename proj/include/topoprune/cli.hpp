#pragma once

// Command-line front end. Each pipeline stage is one subcommand that reads
// and writes plain files.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "topoprune/activation_pipeline.hpp"
#include "topoprune/diagram.hpp"
#include "topoprune/encoder.hpp"
#include "topoprune/error.hpp"
#include "topoprune/planner.hpp"
#include "topoprune/surgeon.hpp"
#include "topoprune/tensor_store.hpp"
#include "topoprune/zero_ph.hpp"

namespace topoprune::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;

inline constexpr std::size_t kDefaultCorpusSize = 150;

namespace detail {

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail("'" + path.string() + "': " + e.what());
  }
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  topoprune::detail::write_text(path, j.dump(2) + "\n");
}

inline void ensure_parent(const fs::path& path) {
  if (!path.has_parent_path()) return;
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create '" + path.parent_path().string() + "'");
}

// Drops levels for layers the model does not have.
inline LevelAssignment restrict_layers(const LevelAssignment& a, int layers) {
  LevelAssignment out;
  for (const auto& [key, level] : a.levels()) {
    if (key.first <= layers) out.set(key.first, key.second, level);
  }
  return out;
}

inline TokenBatch load_batch(const fs::path& corpus_path, const EncoderConfig& cfg, std::size_t size,
                             std::uint64_t seed) {
  const Corpus corpus = read_corpus(corpus_path);
  require(!corpus.empty(), "corpus '" + corpus_path.string() + "' has no texts");
  return make_batch(sample_corpus(corpus, size, seed), cfg);
}

}  // namespace detail

// Runs one CLI invocation. args excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Neuron scoring and pruning of transformer encoders by zero-dimensional persistence",
               "topoprune"};
  app.require_subcommand(1);

  // init-model
  auto* init = app.add_subcommand("init-model", "Write a deterministic random checkpoint");
  std::string init_config, init_out;
  std::optional<std::uint64_t> init_seed;
  init->add_option("--config", init_config, "Encoder config JSON (L,H,A,I,V,M,seed)")
      ->required()->check(CLI::ExistingFile);
  init->add_option("--out", init_out, "Output checkpoint (.tst)")->required();
  init->add_option("--seed", init_seed, "Override the config seed");

  // dump-acts
  auto* dump = app.add_subcommand("dump-acts", "Capture [CLS] activations of every component");
  std::string dump_ckpt, dump_corpus, dump_out, dump_capture = "affine";
  std::size_t dump_size = kDefaultCorpusSize;
  std::uint64_t dump_seed = 0;
  dump->add_option("--ckpt", dump_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  dump->add_option("--corpus", dump_corpus, "Pre-tokenized corpus, one text per line")
      ->required()->check(CLI::ExistingFile);
  dump->add_option("--out", dump_out, "Output activation dump (.tst)")->required();
  dump->add_option("--corpus-size", dump_size, "Number of texts sampled from the corpus")
      ->check(CLI::PositiveNumber);
  dump->add_option("--capture", dump_capture, "Capture point: affine|post")
      ->check(CLI::IsMember({"affine", "post"}));
  dump->add_option("--seed", dump_seed, "Corpus sampling seed");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Score neurons and write r_f reports");
  std::string analyze_acts, analyze_out;
  analyze->add_option("--activations", analyze_acts, "Activation dump")->required()->check(CLI::ExistingFile);
  analyze->add_option("--out", analyze_out, "Report directory")->required();

  // plan
  auto* plan_cmd = app.add_subcommand("plan", "Build a pruning plan from r_f scores");
  std::string plan_arch, plan_assignment, plan_rf, plan_scores, plan_out, plan_config, plan_ckpt;
  std::optional<int> plan_heads;
  bool plan_global = false;
  std::vector<std::string> plan_percents;
  auto* arch_opt = plan_cmd->add_option("--arch", plan_arch, "Published level table: base|large")
                       ->check(CLI::IsMember({"base", "large"}));
  auto* assign_opt = plan_cmd->add_option("--assignment", plan_assignment, "Custom level assignment JSON")
                         ->check(CLI::ExistingFile);
  arch_opt->excludes(assign_opt);
  auto* rf_opt = plan_cmd->add_option("--rf", plan_rf, "rf.csv written by analyze (neurons.csv is read beside it)")
                     ->check(CLI::ExistingFile);
  auto* scores_opt = plan_cmd->add_option("--scores", plan_scores, "Per-neuron scores CSV")->check(CLI::ExistingFile);
  rf_opt->excludes(scores_opt);
  plan_cmd->add_option("--out", plan_out, "Output plan JSON")->required();
  plan_cmd->add_option("--config", plan_config, "Architecture config for the parameter report")
      ->check(CLI::ExistingFile);
  plan_cmd->add_option("--ckpt", plan_ckpt, "Take the architecture config from a checkpoint")
      ->check(CLI::ExistingFile);
  plan_cmd->add_option("--heads", plan_heads, "Attention head count")->check(CLI::PositiveNumber);
  plan_cmd->add_flag("--global-percentile", plan_global, "Component-wide percentile cut for Q/K/V");
  plan_cmd->add_option("--percentile", plan_percents, "Override a level's percentile, e.g. P30=35");

  // prune
  auto* prune = app.add_subcommand("prune", "Apply a plan to a checkpoint");
  std::string prune_ckpt, prune_plan, prune_out;
  bool prune_no_comp = false;
  prune->add_option("--ckpt", prune_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  prune->add_option("--plan", prune_plan, "Plan JSON")->required()->check(CLI::ExistingFile);
  prune->add_option("--out", prune_out, "Output checkpoint; the manifest is written beside it")->required();
  prune->add_flag("--no-compensation", prune_no_comp, "Delete neurons without folding compensation");

  // verify
  auto* verify = app.add_subcommand("verify", "Measure [CLS] drift between two checkpoints");
  std::string verify_orig, verify_pruned, verify_corpus, verify_out;
  std::size_t verify_size = kDefaultCorpusSize;
  std::uint64_t verify_seed = 0;
  verify->add_option("--original", verify_orig, "Original checkpoint")->required()->check(CLI::ExistingFile);
  verify->add_option("--pruned", verify_pruned, "Pruned checkpoint")->required()->check(CLI::ExistingFile);
  verify->add_option("--corpus", verify_corpus, "Pre-tokenized corpus")->required()->check(CLI::ExistingFile);
  verify->add_option("--corpus-size", verify_size, "Number of texts sampled")->check(CLI::PositiveNumber);
  verify->add_option("--seed", verify_seed, "Corpus sampling seed");
  verify->add_option("--out", verify_out, "Write the drift report JSON here");

  // diagram
  auto* diagram = app.add_subcommand("diagram", "Birth-death diagram of one neuron");
  std::string diag_acts, diag_component, diag_out, diag_scale = "radius";
  int diag_layer = 0, diag_neuron = 0;
  diagram->add_option("--activations", diag_acts, "Activation dump")->required()->check(CLI::ExistingFile);
  diagram->add_option("--layer", diag_layer, "Layer (from 1)")->required();
  diagram->add_option("--component", diag_component, "Q|K|V|AttOutput|Intermediate|Output")->required();
  diagram->add_option("--neuron", diag_neuron, "Neuron index")->required();
  diagram->add_option("--out", diag_out, "Output directory")->required();
  diagram->add_option("--death-scale", diag_scale, "radius|distance")->check(CLI::IsMember({"radius", "distance"}));

  // report
  auto* report = app.add_subcommand("report", "Parameter counts of a checkpoint or a plan");
  std::string report_ckpt, report_plan, report_config;
  auto* rc = report->add_option("--ckpt", report_ckpt, "Checkpoint")->check(CLI::ExistingFile);
  auto* rp = report->add_option("--plan", report_plan, "Plan JSON")->check(CLI::ExistingFile);
  rc->excludes(rp);
  report->add_option("--config", report_config, "Architecture config for --plan")->check(CLI::ExistingFile);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const CLI::App* sub = nullptr;
    for (const auto* s : app.get_subcommands()) sub = s;
    err << (sub ? sub->help() : app.help());
    return kExitValidation;
  }

  try {
    if (init->parsed()) {
      EncoderConfig cfg = read_config_file(init_config);
      if (init_seed) cfg.seed = *init_seed;
      detail::ensure_parent(init_out);
      write_checkpoint(init_out, init_model(cfg));
      out << "wrote " << init_out << " (" << count_shape_parameters(cfg) << " parameters)\n";
    } else if (dump->parsed()) {
      const Checkpoint ckpt = read_checkpoint(dump_ckpt);
      const EncoderModel model(ckpt);
      const TokenBatch batch = detail::load_batch(dump_corpus, model.config(), dump_size, dump_seed);
      const Checkpoint acts = dump_activations(model, batch, parse_capture_mode(dump_capture));
      detail::ensure_parent(dump_out);
      write_checkpoint(dump_out, acts);
      out << "wrote " << dump_out << " (" << batch.rows << " texts, " << acts.tensors.size() << " tensors)\n";
    } else if (analyze->parsed()) {
      const ActivationDump acts = read_dump(analyze_acts);
      const auto distributions = summarize(score_neurons(acts));
      export_report(distributions, analyze_out);
      out << "wrote " << (fs::path(analyze_out) / "rf.csv").string() << ", neurons.csv, medians.svg ("
          << distributions.size() << " distributions)\n";
    } else if (plan_cmd->parsed()) {
      require(!plan_arch.empty() || !plan_assignment.empty(), "plan: one of --arch or --assignment is required");
      require(!plan_rf.empty() || !plan_scores.empty(), "plan: one of --rf or --scores is required");
      fs::path scores_path = plan_scores;
      if (scores_path.empty()) {
        scores_path = fs::path(plan_rf).parent_path() / "neurons.csv";
        require(fs::exists(scores_path), "plan: '" + scores_path.string() + "' not found next to --rf");
      }
      std::optional<EncoderConfig> cfg;
      if (!plan_ckpt.empty()) {
        const auto store = TensorStore::open(plan_ckpt);
        const auto it = store.metadata().find("config");
        require(it != store.metadata().end(), "plan: checkpoint has no config metadata");
        cfg = EncoderConfig::from_json(nlohmann::json::parse(it->second));
      } else if (!plan_config.empty()) {
        cfg = read_config_file(plan_config);
      } else if (!plan_arch.empty()) {
        cfg = arch_config(parse_arch(plan_arch));
      }
      const int heads = plan_heads ? *plan_heads : (cfg ? cfg->heads : 0);
      require(heads >= 1, "plan: head count unknown; pass --heads, --config or --ckpt");

      PlanOptions options;
      options.global_percentile = plan_global;
      for (const auto& item : plan_percents) {
        const auto eq = item.find('=');
        require(eq != std::string::npos, "plan: --percentile expects LEVEL=VALUE");
        const Level level = parse_level(item.substr(0, eq));
        require(level != Level::kNone, "plan: cannot set a percentile for None");
        double value = 0.0;
        try {
          value = std::stod(item.substr(eq + 1));
        } catch (...) {
          fail("plan: bad percentile value in '" + item + "'");
        }
        require(value >= 0.0 && value <= 100.0, "plan: percentile must lie in [0, 100]");
        options.percents[level] = value;
      }

      const auto scores = parse_neuron_csv(topoprune::detail::read_text(scores_path));
      const auto distributions = summarize(scores);
      LevelAssignment assignment = plan_arch.empty() ? parse_assignment(detail::read_json(plan_assignment))
                                                     : default_assignment(parse_arch(plan_arch));
      int layers = 0;
      for (const auto& d : distributions) layers = std::max(layers, d.layer);
      if (cfg) layers = std::min(layers, cfg->layers);
      assignment = detail::restrict_layers(assignment, layers);
      const PrunePlan plan = build_plan(distributions, assignment, heads, options);
      detail::ensure_parent(plan_out);
      const auto j = plan_to_json(plan, cfg);
      detail::write_json(plan_out, j);
      out << "wrote " << plan_out;
      if (j.contains("parameters")) out << " (parameter ratio " << j["parameters"]["ratio"].get<double>() << ")";
      out << "\n";
    } else if (prune->parsed()) {
      const Checkpoint ckpt = read_checkpoint(prune_ckpt);
      const PrunePlan plan = plan_from_json(detail::read_json(prune_plan));
      const auto result = apply_plan(ckpt, plan, !prune_no_comp);
      detail::ensure_parent(prune_out);
      write_checkpoint(prune_out, result.checkpoint);
      fs::path manifest_path = prune_out;
      manifest_path.replace_extension(".manifest.json");
      detail::write_json(manifest_path, result.manifest.to_json());
      out << "wrote " << prune_out << " and " << manifest_path.string() << " ("
          << result.manifest.pruned_parameters << " of " << result.manifest.original_parameters
          << " parameters)\n";
    } else if (verify->parsed()) {
      const Checkpoint a = read_checkpoint(verify_orig);
      const Checkpoint b = read_checkpoint(verify_pruned);
      const EncoderModel model(a);
      const TokenBatch batch = detail::load_batch(verify_corpus, model.config(), verify_size, verify_seed);
      const auto drift = verify_surgery(a, b, batch).to_json();
      if (!verify_out.empty()) {
        detail::ensure_parent(verify_out);
        detail::write_json(verify_out, drift);
      }
      out << drift.dump(2) << "\n";
    } else if (diagram->parsed()) {
      const ActivationDump acts = read_dump(diag_acts);
      const Component c = parse_component(diag_component);
      require(diag_layer >= 1 && diag_layer <= acts.layers, "diagram: layer out of range");
      const Tensor& t = acts.at(diag_layer, c);
      require(diag_neuron >= 0 && diag_neuron < t.cols(), "diagram: neuron index out of range");
      const auto values = topoprune::detail::column(t, diag_neuron);
      const ZeroDimResult result = zero_persistence(PointCloud::from_values(values));
      const double scale = diag_scale == "distance" ? 2.0 : 1.0;
      std::error_code ec;
      fs::create_directories(diag_out, ec);
      if (ec) throw Error(ErrorCode::kIo, "cannot create '" + diag_out + "'");
      std::ostringstream csv;
      write_diagram_csv(csv, to_diagram(result), scale);
      topoprune::detail::write_text(fs::path(diag_out) / "diagram.csv", csv.str());
      const std::string title = "layer " + std::to_string(diag_layer) + " " + diag_component + " neuron " +
                                std::to_string(diag_neuron);
      topoprune::detail::write_text(fs::path(diag_out) / "diagram.svg", birth_death_svg(result, scale, title));
      out << "r_f = " << format_value(result.r_f * scale) << "\n";
    } else if (report->parsed()) {
      require(!report_ckpt.empty() || !report_plan.empty(), "report: one of --ckpt or --plan is required");
      nlohmann::json j;
      if (!report_ckpt.empty()) {
        j = {{"parameters", count_parameters(TensorStore::open(report_ckpt))}};
      } else {
        const auto plan_json = detail::read_json(report_plan);
        std::optional<EncoderConfig> cfg;
        if (!report_config.empty()) {
          cfg = read_config_file(report_config);
        } else if (plan_json.contains("config")) {
          cfg = EncoderConfig::from_json(plan_json["config"]);
        }
        require(cfg.has_value(), "report: plan has no config; pass --config");
        const auto r = plan_parameter_report(plan_from_json(plan_json), *cfg);
        j = {{"original", r.original}, {"pruned", r.pruned}, {"ratio", r.ratio}};
      }
      out << j.dump(2) << "\n";
    }
  } catch (const Error& e) {
    err << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return e.is_io() ? kExitIo : kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitOk;
}

}  // namespace topoprune::cli
