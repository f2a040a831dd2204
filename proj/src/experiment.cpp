#include "viewmetric/experiment.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

namespace viewmetric {

namespace {

std::string join(const std::vector<int>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

std::string join(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ',';
    out += format_real(values[i]);
  }
  return out;
}

std::vector<int> parse_int_list(std::string_view text) {
  std::vector<int> out;
  if (trim(text).empty()) return out;
  for (const auto& part : split(text, ',')) out.push_back(static_cast<int>(parse_integer(part)));
  return out;
}

std::vector<double> parse_real_list(std::string_view text) {
  std::vector<double> out;
  if (trim(text).empty()) return out;
  for (const auto& part : split(text, ',')) out.push_back(parse_real(part));
  return out;
}

bool parse_flag(std::string_view text) {
  text = trim(text);
  if (text == "1" || text == "true") return true;
  if (text == "0" || text == "false") return false;
  throw ConfigError("expected true/false, found '" + std::string(text) + "'");
}

int to_int(std::string_view text) { return static_cast<int>(parse_integer(text)); }

std::uint64_t to_seed(std::string_view text) {
  const long long v = parse_integer(text);
  if (v < 0) throw ConfigError("seeds must be non-negative");
  return static_cast<std::uint64_t>(v);
}

using Setter = std::function<void(ExperimentConfig&, std::string_view)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"n_ids", [](auto& c, auto v) { c.gen.n_ids = to_int(v); }},
      {"imgs_per_id", [](auto& c, auto v) { c.gen.imgs_per_id = to_int(v); }},
      {"d_z", [](auto& c, auto v) { c.gen.d_z = to_int(v); }},
      {"d_x", [](auto& c, auto v) { c.gen.d_x = to_int(v); }},
      {"n_viewpoints", [](auto& c, auto v) { c.gen.n_viewpoints = to_int(v); }},
      {"viewpoint_gap", [](auto& c, auto v) { c.gen.viewpoint_gap = parse_real(v); }},
      {"within_view_noise", [](auto& c, auto v) { c.gen.within_view_noise = parse_real(v); }},
      {"test_fraction", [](auto& c, auto v) { c.test_fraction = parse_real(v); }},
      {"vp_epochs", [](auto& c, auto v) { c.vp_epochs = to_int(v); }},
      {"vp_lr", [](auto& c, auto v) { c.vp_lr = parse_real(v); }},
      {"trunk_widths", [](auto& c, auto v) { c.trunk_widths = parse_int_list(v); }},
      {"branch_widths", [](auto& c, auto v) { c.branch_widths = parse_int_list(v); }},
      {"d_e", [](auto& c, auto v) { c.d_e = to_int(v); }},
      {"n_branches", [](auto& c, auto v) { c.n_branches = to_int(v); }},
      {"use_ce_head", [](auto& c, auto v) { c.use_ce_head = parse_flag(v); }},
      {"normalize_embeddings", [](auto& c, auto v) { c.normalize_embeddings = parse_flag(v); }},
      {"epochs", [](auto& c, auto v) { c.train.epochs = to_int(v); }},
      {"steps_per_epoch", [](auto& c, auto v) { c.train.steps_per_epoch = to_int(v); }},
      {"batch_ids", [](auto& c, auto v) { c.train.ids_per_batch = to_int(v); }},
      {"batch_imgs_per_id", [](auto& c, auto v) { c.train.imgs_per_id = to_int(v); }},
      {"lr_initial", [](auto& c, auto v) { c.train.lr_initial = parse_real(v); }},
      {"lr_decay_factor", [](auto& c, auto v) { c.train.lr_decay_factor = parse_real(v); }},
      {"lr_decay_epochs", [](auto& c, auto v) { c.train.lr_decay_epochs = parse_int_list(v); }},
      {"alpha", [](auto& c, auto v) { c.train.alpha = parse_real(v); }},
      {"lambda_ce", [](auto& c, auto v) { c.train.lambda_ce = parse_real(v); }},
      {"adam_epsilon", [](auto& c, auto v) { c.train.adam_epsilon = parse_real(v); }},
      {"variant", [](auto& c, auto v) { c.train.variant = parse_variant(v); }},
      {"trials", [](auto& c, auto v) { c.trials = to_int(v); }},
      {"hist_bins", [](auto& c, auto v) { c.hist_bins = to_int(v); }},
      {"master_seed", [](auto& c, auto v) { c.master_seed = to_seed(v); }},
      {"n_seeds", [](auto& c, auto v) { c.n_seeds = to_int(v); }},
      {"sigma", [](auto& c, auto v) { c.sigma = parse_real(v); }},
      {"sigmas", [](auto& c, auto v) { c.sigmas = parse_real_list(v); }},
      {"branch_counts", [](auto& c, auto v) { c.branch_counts = parse_int_list(v); }},
  };
  return table;
}

std::uint64_t offset(std::uint64_t seed, std::uint64_t k) { return seed + k; }

struct MeanAccumulator {
  double top1 = 0, top5 = 0, top20 = 0, map = 0, overlap = 0;
  double s = 0, d = 0, s_star = 0, d_star = 0;
  int n = 0, n_s = 0, n_d = 0;

  void add(const TrialResult& t, double ov = 0.0) {
    top1 += t.top1;
    top5 += t.top5;
    top20 += t.top20;
    map += t.map;
    overlap += ov;
    ++n;
    if (t.viewpoint.top1_s) {
      s += *t.viewpoint.top1_s;
      s_star += *t.viewpoint.top1_s_star;
      ++n_s;
    }
    if (t.viewpoint.top1_d) {
      d += *t.viewpoint.top1_d;
      d_star += *t.viewpoint.top1_d_star;
      ++n_d;
    }
  }

  static std::string opt(double sum, int count) { return count > 0 ? format_real(sum / count) : std::string(); }
};

}  // namespace

void ExperimentConfig::validate() const {
  gen.validate();
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("invalid test_fraction: must lie in (0, 1)");
  if (vp_epochs < 0) throw ConfigError("invalid vp_epochs: must be >= 0");
  if (!(vp_lr > 0.0)) throw ConfigError("invalid vp_lr: must be positive");
  if (d_e < 1) throw ConfigError("invalid d_e: must be >= 1");
  if (n_branches < 1) throw ConfigError("invalid n_branches: must be >= 1");
  for (int w : trunk_widths) {
    if (w < 1) throw ConfigError("invalid trunk_widths: all widths must be >= 1");
  }
  for (int w : branch_widths) {
    if (w < 1) throw ConfigError("invalid branch_widths: all widths must be >= 1");
  }
  train.validate();
  if (trials < 1) throw ConfigError("invalid trials: must be >= 1");
  if (hist_bins < 1) throw ConfigError("invalid hist_bins: must be >= 1");
  if (n_seeds < 1) throw ConfigError("invalid n_seeds: must be >= 1");
  if (!(sigma >= 0.0 && sigma <= 1.0)) throw ConfigError("invalid sigma: must lie in [0, 1]");
  for (double s : sigmas) {
    if (!(s >= 0.0 && s <= 1.0)) throw ConfigError("invalid sigmas: every value must lie in [0, 1]");
  }
  for (int k : branch_counts) {
    if (k < 2) throw ConfigError("invalid branch_counts: every count must be >= 2");
  }
}

ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = line;
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string_view key = trim(view.substr(0, eq));
    const std::string_view value = trim(view.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(where + "unknown key '" + std::string(key) + "'");
    try {
      it->second(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + "field '" + std::string(key) + "': " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  return parse_config(in);
}

std::string echo_config(const ExperimentConfig& c) {
  std::ostringstream out;
  out << "n_ids = " << c.gen.n_ids << '\n'
      << "imgs_per_id = " << c.gen.imgs_per_id << '\n'
      << "d_z = " << c.gen.d_z << '\n'
      << "d_x = " << c.gen.d_x << '\n'
      << "n_viewpoints = " << c.gen.n_viewpoints << '\n'
      << "viewpoint_gap = " << format_real(c.gen.viewpoint_gap) << '\n'
      << "within_view_noise = " << format_real(c.gen.within_view_noise) << '\n'
      << "test_fraction = " << format_real(c.test_fraction) << '\n'
      << "vp_epochs = " << c.vp_epochs << '\n'
      << "vp_lr = " << format_real(c.vp_lr) << '\n'
      << "trunk_widths = " << join(c.trunk_widths) << '\n'
      << "branch_widths = " << join(c.branch_widths) << '\n'
      << "d_e = " << c.d_e << '\n'
      << "n_branches = " << c.n_branches << '\n'
      << "use_ce_head = " << (c.use_ce_head ? "true" : "false") << '\n'
      << "normalize_embeddings = " << (c.normalize_embeddings ? "true" : "false") << '\n'
      << "epochs = " << c.train.epochs << '\n'
      << "steps_per_epoch = " << c.train.steps_per_epoch << '\n'
      << "batch_ids = " << c.train.ids_per_batch << '\n'
      << "batch_imgs_per_id = " << c.train.imgs_per_id << '\n'
      << "lr_initial = " << format_real(c.train.lr_initial) << '\n'
      << "lr_decay_factor = " << format_real(c.train.lr_decay_factor) << '\n'
      << "lr_decay_epochs = " << join(c.train.lr_decay_epochs) << '\n'
      << "alpha = " << format_real(c.train.alpha) << '\n'
      << "lambda_ce = " << format_real(c.train.lambda_ce) << '\n'
      << "adam_epsilon = " << format_real(c.train.adam_epsilon) << '\n'
      << "variant = " << variant_name(c.train.variant) << '\n'
      << "trials = " << c.trials << '\n'
      << "hist_bins = " << c.hist_bins << '\n'
      << "master_seed = " << c.master_seed << '\n'
      << "n_seeds = " << c.n_seeds << '\n'
      << "sigma = " << format_real(c.sigma) << '\n'
      << "sigmas = " << join(c.sigmas) << '\n'
      << "branch_counts = " << join(c.branch_counts) << '\n';
  return out.str();
}

std::uint64_t run_seed(std::uint64_t master, int k) { return master + 1000ULL * static_cast<std::uint64_t>(k); }

RunSeeds RunSeeds::from(std::uint64_t seed) {
  return {offset(seed, 1), offset(seed, 2), offset(seed, 3), offset(seed, 4), offset(seed, 5), offset(seed, 6)};
}

PreparedData prepare_data(const Dataset& full, const ExperimentConfig& cfg, std::uint64_t seed) {
  const RunSeeds seeds = RunSeeds::from(seed);
  PreparedData data;
  auto parts = split_by_id(full, cfg.test_fraction, seeds.split);
  data.train = std::move(parts.train);
  data.test = std::move(parts.test);
  data.classifier = train_viewpoint_classifier(data.train, cfg.vp_epochs, cfg.vp_lr, seeds.classifier);
  data.train_predictions = predict_viewpoints(data.classifier, data.train);
  data.test_predictions = predict_viewpoints(data.classifier, data.test);
  data.test_viewpoint_accuracy = prediction_accuracy(data.test_predictions, data.test);
  return data;
}

ModelConfig model_config_for(const ExperimentConfig& cfg, int d_x, int n_classes, int n_branches,
                             std::uint64_t init_seed) {
  ModelConfig m;
  m.d_x = d_x;
  m.trunk_widths = cfg.trunk_widths;
  m.branch_widths = cfg.branch_widths;
  m.d_e = cfg.d_e;
  m.n_branches = n_branches;
  m.n_classes = n_classes;
  m.use_ce_head = cfg.use_ce_head;
  m.normalize_embeddings = cfg.normalize_embeddings;
  m.init_seed = init_seed;
  return m;
}

RunOutcome evaluate_model(const EmbeddingModel& model, const BranchLayout& layout, const PredictionSet& test_predictions,
                          const Dataset& test, const ExperimentConfig& cfg, std::uint64_t seed) {
  const RunSeeds seeds = RunSeeds::from(seed);
  const BranchEmbeddings emb = embed_all(model, test);
  const Matrix distances = conditional_distance_matrix(emb, test_predictions.predicted, layout);
  const std::vector<int> ids = test.ids();
  const std::vector<Viewpoint> truth = test.true_viewpoints();
  const auto splits = make_splits(ids, cfg.trials, seeds.trials);
  RunOutcome out{model, layout, {}, evaluate(distances, ids, truth, splits),
                 distance_histograms(distances, ids, truth, cfg.hist_bins), test_predictions.sigma_applied};
  return out;
}

RunOutcome run_variant(const PreparedData& data, const ExperimentConfig& cfg, Variant variant, int n_branches,
                       double sigma, std::uint64_t seed) {
  const RunSeeds seeds = RunSeeds::from(seed);
  const ViewpointSet& views = data.train.viewpoints;
  const PredictionSet train_preds = inject_errors(data.train_predictions, sigma, views, seeds.errors);
  const PredictionSet test_preds = inject_errors(data.test_predictions, sigma, views, seeds.errors + 100);

  const BranchLayout layout =
      variant == Variant::baseline ? BranchLayout::single(views) : BranchLayout::granular(views, n_branches);
  EmbeddingModel model = init_model(
      model_config_for(cfg, data.train.d_x, data.train.n_ids(), layout.n_branches(), seeds.init));
  TrainConfig tc = cfg.train;
  tc.variant = variant;
  tc.seed = seeds.train;
  TrainResult trained = train(data.train, std::move(model), layout, train_preds, tc);
  RunOutcome out = evaluate_model(trained.model, layout, test_preds, data.test, cfg, seed);
  out.history = std::move(trained.history);
  out.sigma = sigma;
  return out;
}

std::vector<AblationRow> run_ablation(const Dataset& full, const ExperimentConfig& cfg) {
  std::vector<AblationRow> rows;
  for (int k = 0; k < cfg.n_seeds; ++k) {
    const std::uint64_t seed = run_seed(cfg.master_seed, k);
    const PreparedData data = prepare_data(full, cfg, seed);
    for (Variant v : kAllVariants) {
      RunOutcome run = run_variant(data, cfg, v, 2, cfg.sigma, seed);
      rows.push_back({k, seed, v, std::move(run.eval), run.histograms.overlap});
    }
  }
  return rows;
}

std::vector<SigmaRow> run_sigma_sweep(const Dataset& full, const ExperimentConfig& cfg) {
  std::vector<SigmaRow> rows;
  for (int k = 0; k < cfg.n_seeds; ++k) {
    const std::uint64_t seed = run_seed(cfg.master_seed, k);
    const PreparedData data = prepare_data(full, cfg, seed);
    for (Variant v : {Variant::baseline, Variant::vanet}) {
      for (double sigma : cfg.sigmas) {
        const RunOutcome run = run_variant(data, cfg, v, 2, sigma, seed);
        rows.push_back({k, v, sigma, run.eval.aggregate});
      }
    }
  }
  return rows;
}

std::vector<BranchRow> run_branch_sweep(const Dataset& full, const ExperimentConfig& cfg) {
  std::vector<BranchRow> rows;
  for (int k = 0; k < cfg.n_seeds; ++k) {
    const std::uint64_t seed = run_seed(cfg.master_seed, k);
    const PreparedData data = prepare_data(full, cfg, seed);
    for (int branches : cfg.branch_counts) {
      const RunOutcome run = run_variant(data, cfg, Variant::vanet, branches, cfg.sigma, seed);
      rows.push_back({k, branches, run.eval.aggregate});
    }
  }
  return rows;
}

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "variant,top1,top5,top20,mAP,top1_s,top1_d,top1_s_star,top1_d_star,overlap,seeds\n";
  for (Variant v : kAllVariants) {
    MeanAccumulator acc;
    for (const auto& r : rows) {
      if (r.variant == v) acc.add(r.eval.aggregate, r.overlap);
    }
    if (acc.n == 0) continue;
    out << variant_name(v) << ',' << format_real(acc.top1 / acc.n) << ',' << format_real(acc.top5 / acc.n) << ','
        << format_real(acc.top20 / acc.n) << ',' << format_real(acc.map / acc.n) << ','
        << MeanAccumulator::opt(acc.s, acc.n_s) << ',' << MeanAccumulator::opt(acc.d, acc.n_d) << ','
        << MeanAccumulator::opt(acc.s_star, acc.n_s) << ',' << MeanAccumulator::opt(acc.d_star, acc.n_d) << ','
        << format_real(acc.overlap / acc.n) << ',' << acc.n << '\n';
  }
}

void write_sigma_csv(std::ostream& out, const std::vector<SigmaRow>& rows) {
  out << "variant,sigma,top1,top5,seeds\n";
  std::vector<std::pair<Variant, double>> keys;
  for (const auto& r : rows) {
    const auto key = std::make_pair(r.variant, r.sigma);
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
  }
  for (const auto& [variant, sigma] : keys) {
    MeanAccumulator acc;
    for (const auto& r : rows) {
      if (r.variant == variant && r.sigma == sigma) acc.add(r.result);
    }
    out << variant_name(variant) << ',' << format_real(sigma) << ',' << format_real(acc.top1 / acc.n) << ','
        << format_real(acc.top5 / acc.n) << ',' << acc.n << '\n';
  }
}

void write_branch_csv(std::ostream& out, const std::vector<BranchRow>& rows) {
  out << "n_branches,top1,top5,seeds\n";
  std::vector<int> keys;
  for (const auto& r : rows) {
    if (std::find(keys.begin(), keys.end(), r.n_branches) == keys.end()) keys.push_back(r.n_branches);
  }
  for (int k : keys) {
    MeanAccumulator acc;
    for (const auto& r : rows) {
      if (r.n_branches == k) acc.add(r.result);
    }
    out << k << ',' << format_real(acc.top1 / acc.n) << ',' << format_real(acc.top5 / acc.n) << ',' << acc.n << '\n';
  }
}

}  // namespace viewmetric
