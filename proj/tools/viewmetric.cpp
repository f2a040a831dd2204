// viewmetric: dataset generation, training, evaluation and the ablation sweeps.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "viewmetric/experiment.hpp"
#include "viewmetric/manifest.hpp"

namespace fs = std::filesystem;
using namespace viewmetric;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct CommonOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

struct Context {
  CommonOptions common;
  std::string data;
  std::string checkpoint;
  std::string classifier;
  std::string split = "test";
  std::optional<int> trials;
  std::string sigmas;
  std::string branches;
  bool svg = false;
};

void note(const Context& ctx, const std::string& message) {
  if (!ctx.common.quiet) std::cerr << message << '\n';
}

ExperimentConfig read_config(const Context& ctx) {
  ExperimentConfig cfg = ctx.common.config.empty() ? ExperimentConfig{} : load_config(ctx.common.config);
  if (ctx.common.seed) cfg.master_seed = *ctx.common.seed;
  cfg.validate();
  return cfg;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ConfigError("cannot create output directory '" + dir + "'");
}

template <typename Writer>
void write_file(const fs::path& path, Writer&& writer) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  writer(out);
  if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

/// Manifest for a command whose outputs live in `dir`.
class ManifestBuilder {
 public:
  ManifestBuilder(std::string command, const ExperimentConfig& cfg, fs::path dir) : dir_(std::move(dir)) {
    manifest_.command = std::move(command);
    manifest_.config = echo_config(cfg);
    manifest_.seeds.emplace_back("master_seed", cfg.master_seed);
  }

  void input(const std::string& path) {
    if (!path.empty()) manifest_.inputs.push_back(record_file(path, path));
  }

  void seeds(const std::string& prefix, std::uint64_t seed) {
    const RunSeeds s = RunSeeds::from(seed);
    manifest_.seeds.emplace_back(prefix + "run", seed);
    manifest_.seeds.emplace_back(prefix + "split", s.split);
    manifest_.seeds.emplace_back(prefix + "classifier", s.classifier);
    manifest_.seeds.emplace_back(prefix + "init", s.init);
    manifest_.seeds.emplace_back(prefix + "train", s.train);
    manifest_.seeds.emplace_back(prefix + "trials", s.trials);
    manifest_.seeds.emplace_back(prefix + "errors", s.errors);
  }

  void output(const std::string& name) { manifest_.outputs.push_back(record_file((dir_ / name).string(), name)); }

  void save(const std::string& name = "manifest.json") const { save_manifest((dir_ / name).string(), manifest_); }

  ExperimentManifest& raw() { return manifest_; }

 private:
  ExperimentManifest manifest_;
  fs::path dir_;
};

Dataset dataset_from(const ExperimentConfig& cfg) {
  GenConfig gen = cfg.gen;
  gen.seed = cfg.master_seed;
  return generate_dataset(gen);
}

Dataset require_dataset(const Context& ctx) {
  if (ctx.data.empty()) throw ConfigError("--data is required");
  if (!fs::exists(ctx.data)) throw ConfigError("dataset '" + ctx.data + "' does not exist");
  return load_dataset(ctx.data);
}

int cmd_gen(const Context& ctx) {
  const ExperimentConfig cfg = read_config(ctx);
  if (ctx.common.out.empty()) throw ConfigError("--out is required");
  const fs::path out = ctx.common.out;
  if (out.has_parent_path()) ensure_dir(out.parent_path().string());
  const Dataset ds = dataset_from(cfg);
  save_dataset(out.string(), ds);

  ManifestBuilder manifest("gen", cfg, out.parent_path());
  manifest.input(ctx.common.config);
  manifest.raw().seeds.emplace_back("dataset", ds.seed);
  manifest.output(out.filename().string());
  manifest.save(out.filename().string() + ".manifest.json");
  note(ctx, "wrote " + std::to_string(ds.size()) + " samples to " + out.string());
  return kExitOk;
}

int cmd_train(const Context& ctx) {
  ExperimentConfig cfg = read_config(ctx);
  if (ctx.common.out.empty()) throw ConfigError("--out is required");
  const Dataset full = require_dataset(ctx);
  ensure_dir(ctx.common.out);
  const fs::path dir = ctx.common.out;

  const std::uint64_t seed = run_seed(cfg.master_seed, 0);
  const PreparedData data = prepare_data(full, cfg, seed);
  note(ctx, "viewpoint accuracy on held-out ids: " + format_real(data.test_viewpoint_accuracy));
  const Variant variant = cfg.train.variant;
  const int branches = variant == Variant::baseline ? 1 : cfg.n_branches;
  const RunOutcome run = run_variant(data, cfg, variant, branches, cfg.sigma, seed);

  save_model((dir / "model.txt").string(), run.model, run.layout);
  save_classifier((dir / "vpclf.txt").string(), data.classifier);
  write_file(dir / "history.csv", [&](std::ostream& o) { write_history_csv(o, run.history); });
  write_file(dir / "epochs.csv", [&](std::ostream& o) { write_epoch_csv(o, run.history, cfg.train.steps_per_epoch); });

  ManifestBuilder manifest("train", cfg, dir);
  manifest.input(ctx.common.config);
  manifest.input(ctx.data);
  manifest.seeds("", seed);
  for (const char* name : {"model.txt", "vpclf.txt", "history.csv", "epochs.csv"}) manifest.output(name);
  manifest.save();
  note(ctx, "trained " + std::string(variant_name(variant)) + ", final loss " +
                format_real(run.history.steps.empty() ? 0.0 : run.history.steps.back().l_total));
  return kExitOk;
}

int cmd_eval(const Context& ctx) {
  ExperimentConfig cfg = read_config(ctx);
  if (ctx.trials) cfg.trials = *ctx.trials;
  cfg.validate();
  if (ctx.common.out.empty()) throw ConfigError("--out is required");
  if (ctx.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  if (!fs::exists(ctx.checkpoint)) throw ConfigError("checkpoint '" + ctx.checkpoint + "' does not exist");
  const std::string clf_path =
      ctx.classifier.empty() ? (fs::path(ctx.checkpoint).parent_path() / "vpclf.txt").string() : ctx.classifier;
  if (!fs::exists(clf_path)) throw ConfigError("classifier '" + clf_path + "' does not exist");

  const Dataset full = require_dataset(ctx);
  const LoadedModel loaded = load_model(ctx.checkpoint);
  const ViewpointClassifier clf = load_classifier(clf_path);
  const std::uint64_t seed = run_seed(cfg.master_seed, 0);
  const RunSeeds seeds = RunSeeds::from(seed);

  Dataset target;
  if (ctx.split == "test") {
    target = split_by_id(full, cfg.test_fraction, seeds.split).test;
  } else if (ctx.split == "all") {
    target = full;
  } else {
    throw ConfigError("invalid --split: expected 'test' or 'all'");
  }
  const PredictionSet preds =
      inject_errors(predict_viewpoints(clf, target), cfg.sigma, target.viewpoints, seeds.errors + 100);
  const RunOutcome run = evaluate_model(loaded.model, loaded.layout, preds, target, cfg, seed);

  ensure_dir(ctx.common.out);
  const fs::path dir = ctx.common.out;
  write_file(dir / "eval.csv", [&](std::ostream& o) { write_eval_csv(o, run.eval); });
  write_file(dir / "histograms.csv", [&](std::ostream& o) { write_histogram_csv(o, run.histograms); });
  ManifestBuilder manifest("eval", cfg, dir);
  manifest.input(ctx.common.config);
  manifest.input(ctx.data);
  manifest.input(ctx.checkpoint);
  manifest.input(clf_path);
  manifest.seeds("", seed);
  manifest.output("eval.csv");
  manifest.output("histograms.csv");
  if (ctx.svg) {
    write_file(dir / "histograms.svg",
               [&](std::ostream& o) { write_histogram_svg(o, run.histograms, "pair distances"); });
    manifest.output("histograms.svg");
  }
  manifest.save();
  note(ctx, "top1 " + format_real(run.eval.aggregate.top1) + ", mAP " + format_real(run.eval.aggregate.map));
  return kExitOk;
}

void add_run_seeds(ManifestBuilder& manifest, const ExperimentConfig& cfg) {
  for (int k = 0; k < cfg.n_seeds; ++k) manifest.seeds("seed" + std::to_string(k) + ".", run_seed(cfg.master_seed, k));
}

int cmd_ablate(const Context& ctx) {
  const ExperimentConfig cfg = read_config(ctx);
  if (ctx.common.out.empty()) throw ConfigError("--out is required");
  const Dataset full = require_dataset(ctx);
  ensure_dir(ctx.common.out);
  const fs::path dir = ctx.common.out;

  ManifestBuilder manifest("ablate", cfg, dir);
  manifest.input(ctx.common.config);
  manifest.input(ctx.data);
  add_run_seeds(manifest, cfg);

  std::vector<AblationRow> rows;
  for (int k = 0; k < cfg.n_seeds; ++k) {
    const std::uint64_t seed = run_seed(cfg.master_seed, k);
    const PreparedData data = prepare_data(full, cfg, seed);
    for (Variant v : kAllVariants) {
      note(ctx, "seed " + std::to_string(k) + ": " + std::string(variant_name(v)));
      RunOutcome run = run_variant(data, cfg, v, cfg.n_branches, cfg.sigma, seed);
      const std::string stem = std::string(variant_name(v)) + "_seed" + std::to_string(k);
      write_file(dir / ("eval_" + stem + ".csv"), [&](std::ostream& o) { write_eval_csv(o, run.eval); });
      write_file(dir / ("hist_" + stem + ".csv"), [&](std::ostream& o) { write_histogram_csv(o, run.histograms); });
      manifest.output("eval_" + stem + ".csv");
      manifest.output("hist_" + stem + ".csv");
      if (ctx.svg) {
        write_file(dir / ("hist_" + stem + ".svg"), [&](std::ostream& o) {
          write_histogram_svg(o, run.histograms, std::string(variant_name(v)) + " seed " + std::to_string(k));
        });
        manifest.output("hist_" + stem + ".svg");
      }
      rows.push_back({k, seed, v, std::move(run.eval), run.histograms.overlap});
    }
  }
  write_file(dir / "ablation.csv", [&](std::ostream& o) { write_ablation_csv(o, rows); });
  manifest.output("ablation.csv");
  manifest.save();
  return kExitOk;
}

int cmd_sweep_sigma(const Context& ctx) {
  ExperimentConfig cfg = read_config(ctx);
  if (!ctx.sigmas.empty()) {
    cfg.sigmas.clear();
    for (const auto& part : split(ctx.sigmas, ',')) cfg.sigmas.push_back(parse_real(part));
    cfg.validate();
  }
  if (ctx.common.out.empty()) throw ConfigError("--out is required");
  const Dataset full = require_dataset(ctx);
  ensure_dir(ctx.common.out);
  const fs::path dir = ctx.common.out;
  note(ctx, "sweeping " + std::to_string(cfg.sigmas.size()) + " error rates");
  const auto rows = run_sigma_sweep(full, cfg);
  write_file(dir / "sigma.csv", [&](std::ostream& o) { write_sigma_csv(o, rows); });
  ManifestBuilder manifest("sweep-sigma", cfg, dir);
  manifest.input(ctx.common.config);
  manifest.input(ctx.data);
  add_run_seeds(manifest, cfg);
  manifest.output("sigma.csv");
  manifest.save();
  return kExitOk;
}

int cmd_sweep_branches(const Context& ctx) {
  ExperimentConfig cfg = read_config(ctx);
  if (!ctx.branches.empty()) {
    cfg.branch_counts.clear();
    for (const auto& part : split(ctx.branches, ',')) cfg.branch_counts.push_back(static_cast<int>(parse_integer(part)));
    cfg.validate();
  }
  if (ctx.common.out.empty()) throw ConfigError("--out is required");
  const Dataset full = require_dataset(ctx);
  ensure_dir(ctx.common.out);
  const fs::path dir = ctx.common.out;
  note(ctx, "sweeping " + std::to_string(cfg.branch_counts.size()) + " branch counts");
  const auto rows = run_branch_sweep(full, cfg);
  write_file(dir / "branches.csv", [&](std::ostream& o) { write_branch_csv(o, rows); });
  ManifestBuilder manifest("sweep-branches", cfg, dir);
  manifest.input(ctx.common.config);
  manifest.input(ctx.data);
  add_run_seeds(manifest, cfg);
  manifest.output("branches.csv");
  manifest.save();
  return kExitOk;
}

void add_common(CLI::App* cmd, Context& ctx) {
  cmd->add_option("--config", ctx.common.config, "key = value configuration file");
  cmd->add_option("--out", ctx.common.out, "output file (gen) or directory");
  cmd->add_option("--seed", ctx.common.seed, "overrides master_seed");
  cmd->add_flag("--quiet", ctx.common.quiet, "no progress messages");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Viewpoint-aware metric learning experiments on synthetic data"};
  app.require_subcommand(1);
  Context ctx;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(gen, ctx);

  auto* train = app.add_subcommand("train", "train one variant on the train ids of a dataset");
  add_common(train, ctx);
  train->add_option("--data", ctx.data, "dataset file");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, ctx);
  eval->add_option("--data", ctx.data, "dataset file");
  eval->add_option("--checkpoint", ctx.checkpoint, "model checkpoint");
  eval->add_option("--classifier", ctx.classifier, "viewpoint classifier (default: vpclf.txt beside the checkpoint)");
  eval->add_option("--trials", ctx.trials, "number of gallery/query trials");
  eval->add_option("--split", ctx.split, "evaluate the held-out ids ('test') or every sample ('all')");
  eval->add_flag("--svg", ctx.svg, "also render histograms.svg");

  auto* ablate = app.add_subcommand("ablate", "train and evaluate all four variants");
  add_common(ablate, ctx);
  ablate->add_option("--data", ctx.data, "dataset file");
  ablate->add_flag("--svg", ctx.svg, "render one histogram plot per run");

  auto* sigma = app.add_subcommand("sweep-sigma", "top1 against viewpoint prediction error rate");
  add_common(sigma, ctx);
  sigma->add_option("--data", ctx.data, "dataset file");
  sigma->add_option("--sigmas", ctx.sigmas, "comma-separated error rates");

  auto* branches = app.add_subcommand("sweep-branches", "top1/top5 against branch count");
  add_common(branches, ctx);
  branches->add_option("--data", ctx.data, "dataset file");
  branches->add_option("--branches", ctx.branches, "comma-separated branch counts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen(ctx);
    if (train->parsed()) return cmd_train(ctx);
    if (eval->parsed()) return cmd_eval(ctx);
    if (ablate->parsed()) return cmd_ablate(ctx);
    if (sigma->parsed()) return cmd_sweep_sigma(ctx);
    if (branches->parsed()) return cmd_sweep_branches(ctx);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitConfig;
}
