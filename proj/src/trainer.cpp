#include "viewmetric/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

namespace viewmetric {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::baseline:
      return "baseline";
    case Variant::vanet:
      return "vanet";
    case Variant::vanet_no_cross:
      return "vanet_no_cross";
    case Variant::vanet_no_within:
      return "vanet_no_within";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  name = trim(name);
  for (Variant v : kAllVariants) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("invalid variant: '" + std::string(name) +
                    "' (expected baseline, vanet, vanet_no_cross or vanet_no_within)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& what) {
    throw ConfigError("invalid " + field + ": " + what);
  };
  if (epochs < 0) fail("epochs", "must be >= 0");
  if (steps_per_epoch < 1) fail("steps_per_epoch", "must be >= 1");
  if (ids_per_batch < 2) fail("ids_per_batch", "P must be >= 2");
  if (imgs_per_id < 2) fail("imgs_per_id", "K must be >= 2");
  if (!(lr_initial > 0.0)) fail("lr_initial", "must be positive");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) fail("lr_decay_factor", "must lie in (0, 1]");
  for (std::size_t i = 0; i < lr_decay_epochs.size(); ++i) {
    if (i > 0 && lr_decay_epochs[i] <= lr_decay_epochs[i - 1]) fail("lr_decay_epochs", "must be strictly increasing");
    if (lr_decay_epochs[i] < 0 || (epochs > 0 && lr_decay_epochs[i] >= epochs)) {
      fail("lr_decay_epochs", "every decay epoch must lie in [0, epochs)");
    }
  }
  if (!(alpha > 0.0)) fail("alpha", "margin must be positive");
  if (!(lambda_ce >= 0.0)) fail("lambda_ce", "must be >= 0");
  if (!(adam_epsilon > 0.0)) fail("adam_epsilon", "must be positive");
}

LossConfig loss_config_for(Variant variant, const BranchLayout& layout, const TrainConfig& cfg) {
  LossConfig loss{layout, cfg.alpha, cfg.lambda_ce, true, true};
  switch (variant) {
    case Variant::baseline:
      if (layout.n_branches() != 1) throw ConfigError("invalid variant: baseline needs a single-branch model");
      loss.use_cross = false;
      break;
    case Variant::vanet:
      break;
    case Variant::vanet_no_cross:
      loss.use_cross = false;
      break;
    case Variant::vanet_no_within:
      loss.use_within = false;
      break;
  }
  if (variant != Variant::baseline && layout.n_branches() < 2) {
    throw ConfigError("invalid variant: " + std::string(variant_name(variant)) + " needs at least two branches");
  }
  return loss;
}

Batch sample_batch(const Dataset& ds, int ids_per_batch, int imgs_per_id, std::mt19937_64& rng) {
  std::vector<std::vector<int>> by_id(static_cast<std::size_t>(ds.n_ids()));
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    by_id[static_cast<std::size_t>(ds.samples[i].id)].push_back(static_cast<int>(i));
  }
  std::vector<int> present;
  for (std::size_t id = 0; id < by_id.size(); ++id) {
    if (!by_id[id].empty()) present.push_back(static_cast<int>(id));
  }
  if (static_cast<int>(present.size()) < ids_per_batch) {
    throw ConfigError("sample_batch: dataset has " + std::to_string(present.size()) + " ids, batch needs " +
                      std::to_string(ids_per_batch));
  }

  // Partial Fisher-Yates draws P distinct identities.
  for (int k = 0; k < ids_per_batch; ++k) {
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(k), present.size() - 1);
    std::swap(present[static_cast<std::size_t>(k)], present[pick(rng)]);
  }

  Batch batch;
  for (int k = 0; k < ids_per_batch; ++k) {
    const int id = present[static_cast<std::size_t>(k)];
    std::vector<int> pool = by_id[static_cast<std::size_t>(id)];
    if (static_cast<int>(pool.size()) >= imgs_per_id) {
      for (int m = 0; m < imgs_per_id; ++m) {
        std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(m), pool.size() - 1);
        std::swap(pool[static_cast<std::size_t>(m)], pool[pick(rng)]);
        batch.indices.push_back(pool[static_cast<std::size_t>(m)]);
      }
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      for (int m = 0; m < imgs_per_id; ++m) batch.indices.push_back(pool[pick(rng)]);
    }
  }
  for (int i : batch.indices) {
    batch.ids.push_back(ds.samples[static_cast<std::size_t>(i)].id);
    batch.viewpoints.push_back(ds.samples[static_cast<std::size_t>(i)].viewpoint);
  }
  return batch;
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs) {
    throw ConfigError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) + ")");
  }
  const auto decays = std::count_if(cfg.lr_decay_epochs.begin(), cfg.lr_decay_epochs.end(),
                                    [epoch](int e) { return e <= epoch; });
  double lr = cfg.lr_initial;
  for (long k = 0; k < decays; ++k) lr *= cfg.lr_decay_factor;
  return lr;
}

TrainResult train(const Dataset& train, EmbeddingModel model, const BranchLayout& layout,
                  const PredictionSet& predictions, const TrainConfig& cfg) {
  cfg.validate();
  if (predictions.size() != train.size()) {
    throw ConfigError("train: predictions not aligned with the training set");
  }
  if (model.config.d_x != train.d_x) {
    throw ConfigError("train: model d_x does not match the dataset");
  }
  if (model.config.n_branches != layout.n_branches()) {
    throw ConfigError("train: model branch count does not match the layout");
  }
  if (model.config.use_ce_head && model.config.n_classes < train.n_ids()) {
    throw ConfigError("train: ID head has fewer classes than training identities");
  }
  const LossConfig loss_cfg = loss_config_for(cfg.variant, layout, cfg);

  TrainResult result{std::move(model), {}};
  auto& m = result.model;
  AdamState adam = make_adam_state(m.params, cfg.adam_epsilon);
  std::mt19937_64 rng(cfg.seed);
  long long step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const double lr = lr_at(epoch, cfg);
    result.history.epoch_lr.push_back(lr);
    for (int s = 0; s < cfg.steps_per_epoch; ++s, ++step) {
      const Batch batch = sample_batch(train, cfg.ids_per_batch, cfg.imgs_per_id, rng);
      const std::vector<Viewpoint> preds = predictions.gather(batch.indices);
      const ForwardResult fwd = forward(m, train.features(batch.indices));
      const TotalLoss loss = total_loss(fwd.outputs, preds, batch.ids, loss_cfg);
      if (!std::isfinite(loss.report.values.l_total)) {
        throw NumericalError("train: non-finite loss at step " + std::to_string(step));
      }
      const Parameters grads = backward(m, fwd.cache, loss.grad_embeddings, loss.grad_logits);
      try {
        adam_step(adam, m, grads, lr);
      } catch (const NumericalError& e) {
        throw NumericalError("train: step " + std::to_string(step) + ": " + e.what());
      }
      result.history.steps.push_back(loss.report.values);
    }
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started;
    result.history.epoch_seconds.push_back(elapsed.count());
  }
  return result;
}

void write_history_csv(std::ostream& out, const RunHistory& history) {
  write_loss_csv_header(out);
  for (std::size_t i = 0; i < history.steps.size(); ++i) {
    write_loss_csv_row(out, static_cast<long long>(i), history.steps[i]);
  }
}

void write_epoch_csv(std::ostream& out, const RunHistory& history, int steps_per_epoch) {
  out << "epoch,lr,mean_L_total,mean_L_s,mean_L_d,mean_L_cross,mean_L_ce\n";
  for (std::size_t e = 0; e < history.epoch_lr.size(); ++e) {
    LossValues mean;
    const std::size_t begin = e * static_cast<std::size_t>(steps_per_epoch);
    const std::size_t end = std::min(history.steps.size(), begin + static_cast<std::size_t>(steps_per_epoch));
    for (std::size_t s = begin; s < end; ++s) {
      mean.l_total += history.steps[s].l_total;
      mean.l_s += history.steps[s].l_s;
      mean.l_d += history.steps[s].l_d;
      mean.l_cross += history.steps[s].l_cross;
      mean.l_ce += history.steps[s].l_ce;
    }
    const double count = end > begin ? static_cast<double>(end - begin) : 1.0;
    out << e << ',' << format_real(history.epoch_lr[e]) << ',' << format_real(mean.l_total / count) << ','
        << format_real(mean.l_s / count) << ',' << format_real(mean.l_d / count) << ','
        << format_real(mean.l_cross / count) << ',' << format_real(mean.l_ce / count) << '\n';
  }
}

}  // namespace viewmetric
