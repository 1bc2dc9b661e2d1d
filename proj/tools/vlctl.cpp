// vlctl: command-line front end for the VLC fingerprinting pipeline.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "vlctl/harness.hpp"

namespace fs = std::filesystem;
using namespace vlctl;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool fast = false;
  std::optional<std::size_t> workers;
};

struct Options {
  std::string layout;
  std::string data;
  std::string input;
  std::string base;
  std::string checkpoint;
  std::optional<double> nf;
  std::optional<double> threshold;
};

ExperimentConfig load_config(const Globals& g) {
  ExperimentConfig cfg = g.config_path.empty() ? ExperimentConfig{} : load_experiment_config(g.config_path);
  if (g.seed) cfg.dataset_seed = *g.seed;
  if (g.workers) cfg.suite.workers = *g.workers;
  if (g.fast) apply_fast_profile(cfg);
  return cfg;
}

std::string require_out(const Globals& g, const char* cmd) {
  if (g.out.empty()) throw ConfigError(std::string(cmd) + ": --out is required");
  return g.out;
}

void print_run(const RunArtifacts& art) {
  const auto& f = art.summary.at("final");
  std::cout << art.summary.at("label").get<std::string>() << ": val_err_m=" << f.at("val_err_m").get<double>()
            << " val_sr=" << f.at("val_sr").get<double>() << " epochs=" << art.summary.at("epochs_run").get<std::size_t>()
            << " -> " << art.dir.string() << "\n";
}

int run(int argc, char** argv) {
  CLI::App app{"Transfer-learning VLC indoor localization toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  Options o;
  app.add_option("--config", g.config_path, "Experiment config JSON")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Dataset seed (perturb: noise seed)");
  app.add_option("--out", g.out, "Output file or directory");
  app.add_flag("--fast", g.fast, "Use the fast profile");
  app.add_option("--workers", g.workers, "Parallel suite cells")->check(CLI::PositiveNumber);

  auto* synth = app.add_subcommand("synth", "Synthesize a fingerprint dataset CSV");
  synth->add_option("--layout", o.layout, "Layout JSON (default: config layout or the built-in layout)");

  auto* train_cmd = app.add_subcommand("train", "Train a base (NF = 0) or EV model from scratch");
  train_cmd->add_option("--data", o.data, "Dataset CSV (default: synthesize)");
  train_cmd->add_option("--nf", o.nf, "Noise factor applied to the training data")->check(CLI::NonNegativeNumber);

  auto* perturb = app.add_subcommand("perturb", "Add environmental-variation noise to a dataset CSV");
  perturb->add_option("--in", o.input, "Input dataset CSV")->required();
  perturb->add_option("--nf", o.nf, "Noise factor")->required()->check(CLI::NonNegativeNumber);

  auto* transfer_cmd = app.add_subcommand("transfer", "Fine-tune a base checkpoint on perturbed target data");
  transfer_cmd->add_option("--base", o.base, "Base checkpoint")->required();
  transfer_cmd->add_option("--data", o.data, "Dataset CSV (default: synthesize)");
  transfer_cmd->add_option("--nf", o.nf, "Noise factor of the target domain")->check(CLI::NonNegativeNumber);

  auto* evaluate = app.add_subcommand("evaluate", "Report metrics of a checkpoint on a dataset");
  evaluate->add_option("--checkpoint", o.checkpoint, "Checkpoint")->required();
  evaluate->add_option("--data", o.data, "Dataset CSV")->required();
  evaluate->add_option("--threshold", o.threshold, "Success-rate distance threshold in metres");

  auto* cdf = app.add_subcommand("cdf", "Write the localization-error CDF of a checkpoint on a dataset");
  cdf->add_option("--checkpoint", o.checkpoint, "Checkpoint")->required();
  cdf->add_option("--data", o.data, "Dataset CSV")->required();

  auto* suite = app.add_subcommand("suite", "Run the base/EV/TL/limited-data experiment suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  auto cfg = load_config(g);

  if (synth->parsed()) {
    const auto layout = o.layout.empty() ? resolve_layout(cfg) : load_layout(o.layout);
    const auto out = require_out(g, "synth");
    const auto ds = cmd_synth(layout, cfg.channel, cfg.dataset_seed, out);
    std::cout << "wrote " << ds.size() << " records to " << out << "\n";
  } else if (train_cmd->parsed()) {
    if (o.nf) cfg.noise.nf = *o.nf;
    SteadyEpochClock clock;
    print_run(cmd_train(cfg, o.data, require_out(g, "train"), clock));
  } else if (perturb->parsed()) {
    NoiseSpec spec = cfg.noise;
    spec.nf = *o.nf;
    if (g.seed) spec.seed = *g.seed;
    const auto out = require_out(g, "perturb");
    const auto ds = cmd_perturb(o.input, spec, out);
    std::cout << "wrote " << ds.size() << " records (NF = " << spec.nf << ") to " << out << "\n";
  } else if (transfer_cmd->parsed()) {
    if (o.nf) cfg.noise.nf = *o.nf;
    SteadyEpochClock clock;
    print_run(cmd_transfer(cfg, o.base, o.data, require_out(g, "transfer"), clock));
  } else if (evaluate->parsed()) {
    const auto j = cmd_evaluate(o.checkpoint, o.data, o.threshold.value_or(cfg.train.success_threshold_m),
                                cfg.train.error_norm, cfg.train.boundary);
    if (!g.out.empty()) text::write_file(g.out, j.dump(2) + "\n");
    std::cout << j.dump(2) << "\n";
  } else if (cdf->parsed()) {
    const auto out = require_out(g, "cdf");
    const auto curve = cmd_cdf(o.checkpoint, o.data, out, cfg.train.error_norm);
    std::cout << "wrote CDF of " << curve.sample_count << " samples to " << out << "\n";
  } else if (suite->parsed()) {
    const fs::path root = g.out.empty() ? fs::path(cfg.output_dir) : fs::path(g.out);
    const auto result = cmd_suite(cfg, root, cfg.suite.workers, &std::cerr);
    std::cout << suite_full_table(result);
    std::cout << "suite " << result.suite_id << ": " << result.cells_run << " cells run, " << result.cells_reused
              << " reused -> " << result.dir.string() << "\n";
    if (!result.ok()) {
      for (const auto& f : result.failures) std::cerr << "error: cell " << f << "\n";
      return 2;
    }
  }
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
