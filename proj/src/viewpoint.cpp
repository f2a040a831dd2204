#include "viewmetric/viewpoint.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace viewmetric {

namespace {

constexpr std::string_view kClassifierMagic = "#viewmetric-vpclf";

}  // namespace

Relation pair_relation(Viewpoint a, Viewpoint b) {
  return a == b ? Relation::s_view : Relation::d_view;
}

Relation pair_relation(const ViewpointSet& set, Viewpoint a, Viewpoint b) {
  if (!set.contains(a) || !set.contains(b)) {
    throw ConfigError("pair_relation: viewpoint outside the declared set " + set.to_string());
  }
  return pair_relation(a, b);
}

Vector ViewpointClassifier::scores(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  return weights * x.transpose() + bias;
}

std::vector<Viewpoint> PredictionSet::gather(const std::vector<int>& indices) const {
  std::vector<Viewpoint> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(predicted.at(static_cast<std::size_t>(i)));
  return out;
}

ViewpointClassifier train_viewpoint_classifier(const Dataset& train, int epochs, double lr,
                                               std::uint64_t seed) {
  if (train.samples.empty()) {
    throw ConfigError("viewpoint classifier: empty training set");
  }
  if (epochs < 0 || !(lr > 0.0)) {
    throw ConfigError("viewpoint classifier: epochs must be >= 0 and lr > 0");
  }
  const int views = train.viewpoints.size();
  std::vector<int> counts(static_cast<std::size_t>(views), 0);
  for (const auto& s : train.samples) ++counts[static_cast<std::size_t>(s.viewpoint)];
  for (int v = 0; v < views; ++v) {
    if (counts[static_cast<std::size_t>(v)] == 0) {
      throw ConfigError("viewpoint classifier: viewpoint '" +
                        std::string(viewpoint_name(static_cast<Viewpoint>(v))) +
                        "' absent from training data");
    }
  }

  const Matrix x = train.features();
  const auto n = static_cast<double>(x.rows());
  Matrix targets = Matrix::Zero(x.rows(), views);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    targets(i, static_cast<int>(train.samples[static_cast<std::size_t>(i)].viewpoint)) = 1.0;
  }

  ViewpointClassifier clf;
  clf.viewpoints = train.viewpoints;
  clf.weights = Matrix(views, train.d_x);
  clf.bias = Vector::Zero(views);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> init(-0.01, 0.01);
  for (int r = 0; r < views; ++r) {
    for (int c = 0; c < train.d_x; ++c) clf.weights(r, c) = init(rng);
  }

  for (int epoch = 0; epoch < epochs; ++epoch) {
    Matrix logits = x * clf.weights.transpose();
    logits.rowwise() += clf.bias.transpose();
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      const double top = logits.row(i).maxCoeff();
      logits.row(i) = (logits.row(i).array() - top).exp().matrix();
      logits.row(i) /= logits.row(i).sum();
    }
    const Matrix delta = (logits - targets) / n;
    clf.weights -= lr * (delta.transpose() * x);
    clf.bias -= lr * delta.colwise().sum().transpose();
  }
  if (!clf.weights.allFinite() || !clf.bias.allFinite()) {
    throw NumericalError("viewpoint classifier diverged; lower the learning rate");
  }
  return clf;
}

PredictionSet predict_viewpoints(const ViewpointClassifier& clf, const Dataset& ds) {
  if (clf.d_x() != ds.d_x) {
    throw ConfigError("predict_viewpoints: classifier expects d_x=" + std::to_string(clf.d_x()) +
                      ", dataset has d_x=" + std::to_string(ds.d_x));
  }
  PredictionSet out;
  out.predicted.reserve(ds.size());
  for (const auto& s : ds.samples) {
    const Eigen::Map<const Eigen::RowVectorXd> x(s.x.data(), static_cast<Eigen::Index>(s.x.size()));
    const Vector sc = clf.scores(x);
    Eigen::Index best = 0;
    for (Eigen::Index v = 1; v < sc.size(); ++v) {
      if (sc(v) > sc(best)) best = v;
    }
    out.predicted.push_back(static_cast<Viewpoint>(best));
  }
  return out;
}

PredictionSet inject_errors(const PredictionSet& preds, double sigma, const ViewpointSet& set,
                            std::uint64_t seed) {
  if (!(sigma >= 0.0 && sigma <= 1.0)) {
    throw ConfigError("inject_errors: sigma must lie in [0, 1]");
  }
  PredictionSet out = preds;
  out.sigma_applied = sigma;
  const std::size_t n = preds.size();
  const auto flips = static_cast<std::size_t>(std::llround(sigma * static_cast<double>(n)));
  if (flips == 0) return out;

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Partial Fisher-Yates: the first `flips` entries are a uniform draw without replacement.
  for (std::size_t k = 0; k < flips; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, n - 1);
    std::swap(order[k], order[pick(rng)]);
  }
  const int views = set.size();
  std::uniform_int_distribution<int> other(1, views - 1);
  for (std::size_t k = 0; k < flips; ++k) {
    auto& label = out.predicted[order[k]];
    const int shifted = (static_cast<int>(label) + other(rng)) % views;
    label = static_cast<Viewpoint>(shifted);
  }
  return out;
}

double prediction_accuracy(const PredictionSet& preds, const Dataset& ds) {
  if (preds.size() != ds.size() || ds.size() == 0) {
    throw ConfigError("prediction_accuracy: predictions not aligned with dataset");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (preds.predicted[i] == ds.samples[i].viewpoint) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

void write_classifier(std::ostream& out, const ViewpointClassifier& clf) {
  out << kClassifierMagic << " v1\n";
  out << "viewpoints=" << clf.viewpoints.to_string() << " d_x=" << clf.d_x() << '\n';
  for (Eigen::Index r = 0; r < clf.weights.rows(); ++r) {
    for (Eigen::Index c = 0; c < clf.weights.cols(); ++c) {
      if (c > 0) out << ' ';
      out << format_real(clf.weights(r, c));
    }
    out << '\n';
  }
  for (Eigen::Index r = 0; r < clf.bias.size(); ++r) {
    if (r > 0) out << ' ';
    out << format_real(clf.bias(r));
  }
  out << '\n';
}

ViewpointClassifier read_classifier(std::istream& in) {
  std::string magic, version;
  in >> magic >> version;
  if (magic != kClassifierMagic) throw ConfigError("classifier: not a viewmetric classifier file");
  if (version != "v1") throw ConfigError("classifier: unsupported version '" + version + "'");
  std::string vp_field, dx_field;
  in >> vp_field >> dx_field;
  if (vp_field.rfind("viewpoints=", 0) != 0 || dx_field.rfind("d_x=", 0) != 0) {
    throw ConfigError("classifier: malformed dimension line");
  }
  ViewpointClassifier clf;
  clf.viewpoints = ViewpointSet::parse(vp_field.substr(11));
  const auto d_x = parse_integer(dx_field.substr(4));
  if (d_x < 1) throw ConfigError("classifier: invalid d_x");
  clf.weights = Matrix(clf.viewpoints.size(), d_x);
  clf.bias = Vector(clf.viewpoints.size());
  auto next = [&in]() {
    std::string token;
    if (!(in >> token)) throw ConfigError("classifier: truncated parameter list");
    return parse_real(token);
  };
  for (Eigen::Index r = 0; r < clf.weights.rows(); ++r) {
    for (Eigen::Index c = 0; c < clf.weights.cols(); ++c) clf.weights(r, c) = next();
  }
  for (Eigen::Index r = 0; r < clf.bias.size(); ++r) clf.bias(r) = next();
  std::string extra;
  if (in >> extra) throw ConfigError("classifier: trailing data after bias");
  return clf;
}

void save_classifier(const std::string& path, const ViewpointClassifier& clf) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  write_classifier(out, clf);
}

ViewpointClassifier load_classifier(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open classifier '" + path + "'");
  return read_classifier(in);
}

void write_predictions_csv(std::ostream& out, const PredictionSet& preds, const Dataset& ds) {
  if (preds.size() != ds.size()) {
    throw ConfigError("write_predictions_csv: predictions not aligned with dataset");
  }
  out << "index,true_viewpoint,predicted_viewpoint\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << i << ',' << viewpoint_name(ds.samples[i].viewpoint) << ','
        << viewpoint_name(preds.predicted[i]) << '\n';
  }
}

}  // namespace viewmetric
