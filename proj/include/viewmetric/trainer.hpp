#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "viewmetric/embedding_model.hpp"
#include "viewmetric/synth_data.hpp"
#include "viewmetric/viewpoint.hpp"
#include "viewmetric/viewpoint_loss.hpp"

namespace viewmetric {

enum class Variant { baseline, vanet, vanet_no_cross, vanet_no_within };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);
inline constexpr Variant kAllVariants[] = {Variant::baseline, Variant::vanet, Variant::vanet_no_cross,
                                           Variant::vanet_no_within};

struct TrainConfig {
  int epochs = 60;
  int steps_per_epoch = 50;
  int ids_per_batch = 8;   // P
  int imgs_per_id = 4;     // K
  double lr_initial = 1e-3;
  double lr_decay_factor = 0.1;
  std::vector<int> lr_decay_epochs{24, 48};
  double alpha = 0.5;
  double lambda_ce = 1.0;
  double adam_epsilon = 1e-8;
  Variant variant = Variant::vanet;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Loss configuration implied by a variant for a model with the given layout.
LossConfig loss_config_for(Variant variant, const BranchLayout& layout, const TrainConfig& cfg);

struct Batch {
  std::vector<int> indices;
  std::vector<int> ids;
  std::vector<Viewpoint> viewpoints;
};

/// P distinct identities, K images each; images are drawn without replacement
/// unless the identity has fewer than K samples.
Batch sample_batch(const Dataset& ds, int ids_per_batch, int imgs_per_id, std::mt19937_64& rng);

/// lr_initial * decay^(number of decay epochs <= epoch).
double lr_at(int epoch, const TrainConfig& cfg);

struct RunHistory {
  std::vector<LossValues> steps;
  std::vector<double> epoch_lr;
  std::vector<double> epoch_seconds;
};

struct TrainResult {
  EmbeddingModel model;
  RunHistory history;
};

/// Runs epochs x steps_per_epoch steps of sample -> forward -> loss -> backward -> Adam.
/// `predictions` are aligned with `train` and stay fixed throughout.
TrainResult train(const Dataset& train, EmbeddingModel model, const BranchLayout& layout,
                  const PredictionSet& predictions, const TrainConfig& cfg);

void write_history_csv(std::ostream& out, const RunHistory& history);
/// `epoch,lr,mean_L_total,mean_L_s,mean_L_d,mean_L_cross,mean_L_ce`.
void write_epoch_csv(std::ostream& out, const RunHistory& history, int steps_per_epoch);

}  // namespace viewmetric
