#include "viewmetric/embedding_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace viewmetric {

namespace {

constexpr std::string_view kModelMagic = "#viewmetric-model";

Layer make_layer(int fan_in, int fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Layer layer;
  layer.weight = Matrix(fan_out, fan_in);
  for (int r = 0; r < fan_out; ++r) {
    for (int c = 0; c < fan_in; ++c) layer.weight(r, c) = dist(rng);
  }
  layer.bias = Vector::Zero(fan_out);
  return layer;
}

Matrix affine(const Layer& layer, const Matrix& in) {
  Matrix out = in * layer.weight.transpose();
  out.rowwise() += layer.bias.transpose();
  return out;
}

Matrix rectify(const Matrix& pre) { return pre.cwiseMax(0.0); }

Matrix rectifier_gate(const Matrix& grad, const Matrix& pre) {
  return (pre.array() > 0.0).select(grad, 0.0);
}

void accumulate_layer_grad(Layer& grad, const Matrix& upstream, const Matrix& input) {
  grad.weight.noalias() += upstream.transpose() * input;
  grad.bias += upstream.colwise().sum().transpose();
}

Layer zeros_like(const Layer& layer) {
  return {Matrix::Zero(layer.weight.rows(), layer.weight.cols()), Vector::Zero(layer.bias.size())};
}

std::string join_widths(const std::vector<int>& widths) {
  std::string out;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(widths[i]);
  }
  return out;
}

std::vector<int> parse_widths(std::string_view text) {
  std::vector<int> out;
  if (trim(text).empty()) return out;
  for (const auto& part : split(text, ',')) out.push_back(static_cast<int>(parse_integer(part)));
  return out;
}

std::uint64_t hash_mask(std::uint64_t h, const Matrix& pre) {
  std::uint64_t word = 0;
  int bits = 0;
  for (Eigen::Index i = 0; i < pre.size(); ++i) {
    word = (word << 1) | (pre.data()[i] > 0.0 ? 1U : 0U);
    if (++bits == 64) {
      h = mix_hash(h, word);
      word = 0;
      bits = 0;
    }
  }
  return mix_hash(h, word ^ static_cast<std::uint64_t>(bits));
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& what) {
    throw ConfigError("invalid " + field + ": " + what);
  };
  if (d_x < 1) fail("d_x", "must be >= 1");
  if (d_e < 1) fail("d_e", "must be >= 1");
  if (n_branches < 1) fail("n_branches", "must be >= 1");
  for (int w : trunk_widths) {
    if (w < 1) fail("trunk_widths", "all widths must be >= 1");
  }
  for (int w : branch_widths) {
    if (w < 1) fail("branch_widths", "all widths must be >= 1");
  }
  if (use_ce_head && n_classes < 2) fail("n_classes", "must be >= 2 when the ID head is enabled");
}

std::vector<std::span<double>> Parameters::tensors() {
  std::vector<std::span<double>> out;
  auto add = [&out](Layer& layer) {
    out.emplace_back(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
    out.emplace_back(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
  };
  for (auto& layer : trunk) add(layer);
  for (auto& branch : branches) {
    for (auto& layer : branch) add(layer);
  }
  for (auto& layer : classifiers) add(layer);
  return out;
}

std::vector<std::span<const double>> Parameters::tensors() const {
  std::vector<std::span<const double>> out;
  for (auto span : const_cast<Parameters*>(this)->tensors()) out.emplace_back(span.data(), span.size());
  return out;
}

Parameters Parameters::zeros_like() const {
  Parameters out;
  for (const auto& layer : trunk) out.trunk.push_back(viewmetric::zeros_like(layer));
  for (const auto& branch : branches) {
    auto& dst = out.branches.emplace_back();
    for (const auto& layer : branch) dst.push_back(viewmetric::zeros_like(layer));
  }
  for (const auto& layer : classifiers) out.classifiers.push_back(viewmetric::zeros_like(layer));
  return out;
}

std::size_t Parameters::count() const {
  std::size_t total = 0;
  for (auto t : tensors()) total += t.size();
  return total;
}

bool Parameters::all_finite() const {
  for (auto t : tensors()) {
    if (!std::all_of(t.begin(), t.end(), [](double v) { return std::isfinite(v); })) return false;
  }
  return true;
}

EmbeddingModel init_model(const ModelConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.init_seed);
  EmbeddingModel model;
  model.config = cfg;

  int width = cfg.d_x;
  for (int w : cfg.trunk_widths) {
    model.params.trunk.push_back(make_layer(width, w, rng));
    width = w;
  }
  const int trunk_out = width;
  for (int k = 0; k < cfg.n_branches; ++k) {
    auto& branch = model.params.branches.emplace_back();
    int in = trunk_out;
    for (int w : cfg.branch_widths) {
      branch.push_back(make_layer(in, w, rng));
      in = w;
    }
    branch.push_back(make_layer(in, cfg.d_e, rng));
  }
  if (cfg.use_ce_head) {
    for (int k = 0; k < cfg.n_branches; ++k) {
      model.params.classifiers.push_back(make_layer(cfg.d_e, cfg.n_classes, rng));
    }
  }
  return model;
}

ForwardResult forward(const EmbeddingModel& model, const Matrix& x) {
  const auto& cfg = model.config;
  if (x.cols() != cfg.d_x) {
    throw ConfigError("forward: input has " + std::to_string(x.cols()) + " columns, model expects d_x=" +
                      std::to_string(cfg.d_x));
  }
  if (!x.allFinite()) {
    throw NumericalError("forward: non-finite input");
  }

  ForwardResult result;
  auto& cache = result.cache;
  cache.input = x;

  const Matrix* trunk_out = &cache.input;
  for (const auto& layer : model.params.trunk) {
    cache.trunk_pre.push_back(affine(layer, *trunk_out));
    cache.trunk_post.push_back(rectify(cache.trunk_pre.back()));
    trunk_out = &cache.trunk_post.back();
  }

  for (const auto& branch : model.params.branches) {
    auto& pre = cache.branch_pre.emplace_back();
    auto& post = cache.branch_post.emplace_back();
    const Matrix* in = trunk_out;
    for (std::size_t l = 0; l < branch.size(); ++l) {
      pre.push_back(affine(branch[l], *in));
      if (l + 1 < branch.size()) {
        post.push_back(rectify(pre.back()));
        in = &post.back();
      }
    }
    cache.raw_embeddings.push_back(pre.back());
    Matrix emb = pre.back();
    if (cfg.normalize_embeddings) {
      for (Eigen::Index i = 0; i < emb.rows(); ++i) {
        const double norm = emb.row(i).norm();
        if (norm > 0.0) emb.row(i) /= norm;
      }
    }
    cache.embeddings.push_back(emb);
  }

  result.outputs.embeddings = cache.embeddings;
  for (std::size_t k = 0; k < model.params.classifiers.size(); ++k) {
    result.outputs.logits.push_back(affine(model.params.classifiers[k], cache.embeddings[k]));
  }
  return result;
}

Parameters backward(const EmbeddingModel& model, const ForwardCache& cache,
                    const std::vector<Matrix>& grad_embeddings, const std::vector<Matrix>& grad_logits) {
  const auto& params = model.params;
  const Eigen::Index n = cache.batch_size();
  const auto n_branches = params.branches.size();

  // Shape drift means the cache came from a different model.
  bool consistent = cache.input.cols() == model.config.d_x && cache.trunk_pre.size() == params.trunk.size() &&
                    cache.branch_pre.size() == n_branches && cache.embeddings.size() == n_branches;
  for (std::size_t l = 0; consistent && l < params.trunk.size(); ++l) {
    consistent = cache.trunk_pre[l].cols() == params.trunk[l].weight.rows() && cache.trunk_pre[l].rows() == n;
  }
  for (std::size_t k = 0; consistent && k < n_branches; ++k) {
    consistent = cache.branch_pre[k].size() == params.branches[k].size();
    for (std::size_t l = 0; consistent && l < params.branches[k].size(); ++l) {
      consistent = cache.branch_pre[k][l].cols() == params.branches[k][l].weight.rows() &&
                   cache.branch_pre[k][l].rows() == n;
    }
  }
  if (!consistent) {
    throw ConfigError("backward: forward cache does not match the model (stale cache)");
  }
  if (grad_embeddings.size() != n_branches) {
    throw ConfigError("backward: expected one embedding gradient per branch");
  }
  if (!grad_logits.empty() && grad_logits.size() != params.classifiers.size()) {
    throw ConfigError("backward: expected one logit gradient per classifier head");
  }

  Parameters grads = params.zeros_like();
  const Matrix& trunk_out = params.trunk.empty() ? cache.input : cache.trunk_post.back();
  Matrix trunk_grad = Matrix::Zero(n, trunk_out.cols());

  for (std::size_t k = 0; k < n_branches; ++k) {
    const auto& branch = params.branches[k];
    if (grad_embeddings[k].rows() != n || grad_embeddings[k].cols() != model.config.d_e) {
      throw ConfigError("backward: embedding gradient shape mismatch");
    }
    Matrix upstream = grad_embeddings[k];
    if (!grad_logits.empty()) {
      const auto& head = params.classifiers[k];
      if (grad_logits[k].rows() != n || grad_logits[k].cols() != head.weight.rows()) {
        throw ConfigError("backward: logit gradient shape mismatch");
      }
      accumulate_layer_grad(grads.classifiers[k], grad_logits[k], cache.embeddings[k]);
      upstream.noalias() += grad_logits[k] * head.weight;
    }
    if (model.config.normalize_embeddings) {
      const Matrix& raw = cache.raw_embeddings[k];
      const Matrix& unit = cache.embeddings[k];
      for (Eigen::Index i = 0; i < n; ++i) {
        const double norm = raw.row(i).norm();
        if (norm > 0.0) {
          const double along = unit.row(i).dot(upstream.row(i));
          upstream.row(i) = (upstream.row(i) - along * unit.row(i)) / norm;
        } else {
          upstream.row(i).setZero();
        }
      }
    }
    for (std::size_t l = branch.size(); l-- > 0;) {
      const Matrix& input = l == 0 ? trunk_out : cache.branch_post[k][l - 1];
      accumulate_layer_grad(grads.branches[k][l], upstream, input);
      Matrix down = upstream * branch[l].weight;
      if (l == 0) {
        trunk_grad += down;
      } else {
        upstream = rectifier_gate(down, cache.branch_pre[k][l - 1]);
      }
    }
  }

  if (!params.trunk.empty()) {
    Matrix upstream = rectifier_gate(trunk_grad, cache.trunk_pre.back());
    for (std::size_t l = params.trunk.size(); l-- > 0;) {
      const Matrix& input = l == 0 ? cache.input : cache.trunk_post[l - 1];
      accumulate_layer_grad(grads.trunk[l], upstream, input);
      if (l > 0) upstream = rectifier_gate(upstream * params.trunk[l].weight, cache.trunk_pre[l - 1]);
    }
  }
  return grads;
}

std::uint64_t activation_signature(const ForwardCache& cache) {
  std::uint64_t h = 0x5eed;
  for (const auto& pre : cache.trunk_pre) h = hash_mask(h, pre);
  for (const auto& branch : cache.branch_pre) {
    // The last layer of a branch is linear and never gated.
    for (std::size_t l = 0; l + 1 < branch.size(); ++l) h = hash_mask(h, branch[l]);
  }
  return h;
}

AdamState make_adam_state(const Parameters& params, double epsilon) {
  AdamState state;
  state.first_moment = params.zeros_like();
  state.second_moment = params.zeros_like();
  state.epsilon = epsilon;
  return state;
}

void adam_update(std::span<double> theta, std::span<const double> grad, std::span<double> first_moment,
                 std::span<double> second_moment, double lr, long long step, double beta1, double beta2,
                 double epsilon) {
  const double correction1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double correction2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    first_moment[i] = beta1 * first_moment[i] + (1.0 - beta1) * g;
    second_moment[i] = beta2 * second_moment[i] + (1.0 - beta2) * g * g;
    const double m_hat = first_moment[i] / correction1;
    const double v_hat = second_moment[i] / correction2;
    theta[i] -= lr * m_hat / (std::sqrt(v_hat) + epsilon);
  }
}

void adam_step(AdamState& state, EmbeddingModel& model, const Parameters& grads, double lr) {
  if (!(lr > 0.0)) {
    throw ConfigError("adam_step: learning rate must be positive");
  }
  auto theta = model.params.tensors();
  const auto g = grads.tensors();
  auto m = state.first_moment.tensors();
  auto v = state.second_moment.tensors();
  if (g.size() != theta.size() || m.size() != theta.size() || v.size() != theta.size()) {
    throw ConfigError("adam_step: gradient/state layout does not match the model");
  }
  for (std::size_t t = 0; t < theta.size(); ++t) {
    if (g[t].size() != theta[t].size() || m[t].size() != theta[t].size() || v[t].size() != theta[t].size()) {
      throw ConfigError("adam_step: tensor shape mismatch");
    }
    if (!std::all_of(g[t].begin(), g[t].end(), [](double x) { return std::isfinite(x); })) {
      throw NumericalError("adam_step: non-finite gradient");
    }
  }
  ++state.step;
  for (std::size_t t = 0; t < theta.size(); ++t) {
    adam_update(theta[t], g[t], m[t], v[t], lr, state.step, state.beta1, state.beta2, state.epsilon);
  }
}

GradientCheckReport finite_difference_check(const EmbeddingModel& model, const ScalarLossFn& loss, double step,
                                            double tolerance) {
  GradientCheckReport report;
  const LossEvaluation base = loss(model, true);
  if (!base.gradient) {
    throw ConfigError("finite_difference_check: loss function returned no gradient");
  }
  const auto analytic = base.gradient->tensors();

  EmbeddingModel probe = model;
  auto theta = probe.params.tensors();
  if (analytic.size() != theta.size()) {
    throw ConfigError("finite_difference_check: gradient layout does not match the model");
  }
  for (std::size_t t = 0; t < theta.size(); ++t) {
    for (std::size_t i = 0; i < theta[t].size(); ++i) {
      const double original = theta[t][i];
      theta[t][i] = original + step;
      const LossEvaluation plus = loss(probe, false);
      theta[t][i] = original - step;
      const LossEvaluation minus = loss(probe, false);
      theta[t][i] = original;
      if (plus.region != base.region || minus.region != base.region) {
        ++report.skipped;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * step);
      const double exact = analytic[t][i];
      const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
      report.max_relative_error = std::max(report.max_relative_error, std::abs(exact - numeric) / denom);
      ++report.checked;
    }
  }
  report.passed = report.max_relative_error < tolerance;
  return report;
}

void write_model(std::ostream& out, const EmbeddingModel& model, const BranchLayout& layout) {
  const auto& cfg = model.config;
  if (layout.n_branches() != cfg.n_branches) {
    throw ConfigError("write_model: branch layout does not match the model's branch count");
  }
  out << kModelMagic << " v1\n";
  out << "d_x=" << cfg.d_x << '\n';
  out << "trunk_widths=" << join_widths(cfg.trunk_widths) << '\n';
  out << "branch_widths=" << join_widths(cfg.branch_widths) << '\n';
  out << "d_e=" << cfg.d_e << '\n';
  out << "n_branches=" << cfg.n_branches << '\n';
  out << "n_classes=" << cfg.n_classes << '\n';
  out << "use_ce_head=" << (cfg.use_ce_head ? 1 : 0) << '\n';
  out << "normalize_embeddings=" << (cfg.normalize_embeddings ? 1 : 0) << '\n';
  out << "init_seed=" << cfg.init_seed << '\n';
  out << "viewpoints=" << layout.viewpoints().to_string() << '\n';
  out << "branch_spaces=" << layout.describe() << '\n';
  out << "branch_kinds=" << layout.kinds() << '\n';
  out << "params\n";
  auto write_layer = [&out](const Layer& layer) {
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        if (r > 0 || c > 0) out << ' ';
        out << format_real(layer.weight(r, c));
      }
    }
    out << '\n';
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) {
      if (r > 0) out << ' ';
      out << format_real(layer.bias(r));
    }
    out << '\n';
  };
  for (const auto& layer : model.params.trunk) write_layer(layer);
  for (const auto& branch : model.params.branches) {
    for (const auto& layer : branch) write_layer(layer);
  }
  for (const auto& layer : model.params.classifiers) write_layer(layer);
}

void save_model(const std::string& path, const EmbeddingModel& model, const BranchLayout& layout) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  write_model(out, model, layout);
}

LoadedModel read_model(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("model: empty checkpoint");
  {
    std::istringstream hs(line);
    std::string magic, version;
    hs >> magic >> version;
    if (magic != kModelMagic) throw ConfigError("model: not a viewmetric model checkpoint");
    if (version != "v1") throw ConfigError("model: unsupported version '" + version + "'");
  }

  ModelConfig cfg;
  std::string viewpoints_text, spaces_text;
  bool saw_params = false;
  while (std::getline(in, line)) {
    if (trim(line) == "params") {
      saw_params = true;
      break;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("model: malformed header line '" + line + "'");
    const std::string key(trim(std::string_view(line).substr(0, eq)));
    const std::string_view value = trim(std::string_view(line).substr(eq + 1));
    if (key == "d_x") cfg.d_x = static_cast<int>(parse_integer(value));
    else if (key == "trunk_widths") cfg.trunk_widths = parse_widths(value);
    else if (key == "branch_widths") cfg.branch_widths = parse_widths(value);
    else if (key == "d_e") cfg.d_e = static_cast<int>(parse_integer(value));
    else if (key == "n_branches") cfg.n_branches = static_cast<int>(parse_integer(value));
    else if (key == "n_classes") cfg.n_classes = static_cast<int>(parse_integer(value));
    else if (key == "use_ce_head") cfg.use_ce_head = parse_integer(value) != 0;
    else if (key == "normalize_embeddings") cfg.normalize_embeddings = parse_integer(value) != 0;
    else if (key == "init_seed") cfg.init_seed = static_cast<std::uint64_t>(parse_integer(value));
    else if (key == "viewpoints") viewpoints_text = value;
    else if (key == "branch_spaces") spaces_text = value;
    else if (key == "branch_kinds") continue;
    else throw ConfigError("model: unknown header key '" + key + "'");
  }
  if (!saw_params) throw ConfigError("model: missing parameter section");
  cfg.validate();
  const auto set = ViewpointSet::parse(viewpoints_text);
  BranchLayout layout = BranchLayout::parse(spaces_text, set);
  if (layout.n_branches() != cfg.n_branches) {
    throw ConfigError("model: branch_spaces declares " + std::to_string(layout.n_branches()) +
                      " branches, n_branches is " + std::to_string(cfg.n_branches));
  }

  // Shapes come from the config; the parameter stream must match exactly.
  EmbeddingModel model = init_model(cfg);
  auto next = [&in]() {
    std::string token;
    if (!(in >> token)) throw ConfigError("model: parameter section shorter than the declared shapes");
    return parse_real(token);
  };
  auto read_layer = [&next](Layer& layer) {
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = next();
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = next();
  };
  for (auto& layer : model.params.trunk) read_layer(layer);
  for (auto& branch : model.params.branches) {
    for (auto& layer : branch) read_layer(layer);
  }
  for (auto& layer : model.params.classifiers) read_layer(layer);
  std::string extra;
  if (in >> extra) throw ConfigError("model: parameter section longer than the declared shapes");
  return {std::move(model), std::move(layout)};
}

LoadedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
  return read_model(in);
}

}  // namespace viewmetric
