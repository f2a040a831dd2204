#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "viewmetric/branch_layout.hpp"
#include "viewmetric/embedding_model.hpp"
#include "viewmetric/evaluation.hpp"
#include "viewmetric/synth_data.hpp"
#include "viewmetric/trainer.hpp"
#include "viewmetric/viewpoint.hpp"

namespace viewmetric {

/// Everything a CLI run needs. Parsed from a flat `key = value` file.
struct ExperimentConfig {
  GenConfig gen;
  double test_fraction = 0.375;

  int vp_epochs = 300;
  double vp_lr = 0.05;

  std::vector<int> trunk_widths{64};
  std::vector<int> branch_widths{64};
  int d_e = 32;
  int n_branches = 2;
  bool use_ce_head = true;
  bool normalize_embeddings = false;

  TrainConfig train;

  int trials = 10;
  int hist_bins = 40;

  std::uint64_t master_seed = 1;
  int n_seeds = 3;
  double sigma = 0.0;
  std::vector<double> sigmas{0.0, 0.05, 0.1, 0.2};
  std::vector<int> branch_counts{2, 3, 4};

  void validate() const;
};

/// Unknown keys, malformed values and invalid settings raise ConfigError with the line number.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::string& path);
/// Canonical `key = value` listing of every setting.
std::string echo_config(const ExperimentConfig& cfg);

/// Seed of the k-th repetition: master + 1000 k.
std::uint64_t run_seed(std::uint64_t master, int k);

/// Sub-seeds of one repetition, offset from its run seed.
struct RunSeeds {
  std::uint64_t split;
  std::uint64_t classifier;
  std::uint64_t init;
  std::uint64_t train;
  std::uint64_t trials;
  std::uint64_t errors;

  static RunSeeds from(std::uint64_t seed);
};

/// Identity split plus viewpoint predictions from a classifier trained on the train side.
struct PreparedData {
  Dataset train;
  Dataset test;
  ViewpointClassifier classifier;
  PredictionSet train_predictions;
  PredictionSet test_predictions;
  double test_viewpoint_accuracy = 0.0;
};

PreparedData prepare_data(const Dataset& full, const ExperimentConfig& cfg, std::uint64_t seed);

ModelConfig model_config_for(const ExperimentConfig& cfg, int d_x, int n_classes, int n_branches,
                             std::uint64_t init_seed);

struct RunOutcome {
  EmbeddingModel model;
  BranchLayout layout;
  RunHistory history;
  EvalReport eval;
  HistogramSet histograms;
  double sigma = 0.0;
};

/// Trains one variant and evaluates it on the test side. `sigma` corrupts the
/// viewpoint predictions used for both training and retrieval.
RunOutcome run_variant(const PreparedData& data, const ExperimentConfig& cfg, Variant variant, int n_branches,
                       double sigma, std::uint64_t seed);

/// Evaluates a trained model on the test side of `data`.
RunOutcome evaluate_model(const EmbeddingModel& model, const BranchLayout& layout, const PredictionSet& test_predictions,
                          const Dataset& test, const ExperimentConfig& cfg, std::uint64_t seed);

struct AblationRow {
  int seed_index = 0;
  std::uint64_t seed = 0;
  Variant variant = Variant::vanet;
  EvalReport eval;
  double overlap = 0.0;
};

std::vector<AblationRow> run_ablation(const Dataset& full, const ExperimentConfig& cfg);

struct SigmaRow {
  int seed_index = 0;
  Variant variant = Variant::vanet;
  double sigma = 0.0;
  TrialResult result;
};

std::vector<SigmaRow> run_sigma_sweep(const Dataset& full, const ExperimentConfig& cfg);

struct BranchRow {
  int seed_index = 0;
  int n_branches = 2;
  TrialResult result;
};

std::vector<BranchRow> run_branch_sweep(const Dataset& full, const ExperimentConfig& cfg);

/// One row per variant, averaged over seeds: both retrieval and viewpoint-protocol metrics.
void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows);
/// One row per (variant, sigma), averaged over seeds.
void write_sigma_csv(std::ostream& out, const std::vector<SigmaRow>& rows);
/// One row per branch count, averaged over seeds.
void write_branch_csv(std::ostream& out, const std::vector<BranchRow>& rows);

}  // namespace viewmetric
