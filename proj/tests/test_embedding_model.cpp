#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "test_support.hpp"
#include "viewmetric/embedding_model.hpp"

using namespace viewmetric;
using viewmetric::testing::random_matrix;

namespace {

ModelConfig small_config(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.d_x = 6;
  cfg.trunk_widths = {8};
  cfg.branch_widths = {8};
  cfg.d_e = 4;
  cfg.n_branches = 2;
  cfg.n_classes = 3;
  cfg.init_seed = seed;
  return cfg;
}

void set_all(Parameters& p, double value) {
  for (auto t : p.tensors()) std::fill(t.begin(), t.end(), value);
}

/// Straight-line re-implementation of one forward pass, one row and one unit at a time.
std::vector<double> reference_embedding(const EmbeddingModel& m, const Matrix& x, int row, int branch) {
  std::vector<double> h;
  for (Eigen::Index c = 0; c < x.cols(); ++c) h.push_back(x(row, c));
  auto apply = [](const Layer& layer, const std::vector<double>& in, bool relu) {
    std::vector<double> out;
    for (Eigen::Index o = 0; o < layer.weight.rows(); ++o) {
      double s = layer.bias(o);
      for (Eigen::Index i = 0; i < layer.weight.cols(); ++i) s += layer.weight(o, i) * in[static_cast<std::size_t>(i)];
      out.push_back(relu ? (s > 0.0 ? s : 0.0) : s);
    }
    return out;
  };
  for (const auto& layer : m.params.trunk) h = apply(layer, h, true);
  const auto& head = m.params.branches[static_cast<std::size_t>(branch)];
  for (std::size_t l = 0; l < head.size(); ++l) h = apply(head[l], h, l + 1 < head.size());
  return h;
}

ScalarLossFn sum_of_embeddings(const Matrix& x) {
  return [x](const EmbeddingModel& m, bool want_gradient) {
    const ForwardResult fwd = forward(m, x);
    LossEvaluation eval;
    std::vector<Matrix> grads;
    for (const auto& e : fwd.outputs.embeddings) {
      eval.value += e.sum();
      grads.push_back(Matrix::Ones(e.rows(), e.cols()));
    }
    eval.region = activation_signature(fwd.cache);
    if (want_gradient) eval.gradient = backward(m, fwd.cache, grads, {});
    return eval;
  };
}

ScalarLossFn squared_norm(const Matrix& x) {
  return [x](const EmbeddingModel& m, bool want_gradient) {
    const ForwardResult fwd = forward(m, x);
    LossEvaluation eval;
    std::vector<Matrix> grads;
    for (const auto& e : fwd.outputs.embeddings) {
      eval.value += e.squaredNorm();
      grads.push_back(2.0 * e);
    }
    eval.region = activation_signature(fwd.cache);
    if (want_gradient) eval.gradient = backward(m, fwd.cache, grads, {});
    return eval;
  };
}

}  // namespace

TEST(InitModel, DeterministicWithZeroBiases) {
  const ModelConfig cfg = small_config(5);
  const EmbeddingModel a = init_model(cfg);
  const EmbeddingModel b = init_model(cfg);
  const auto ta = a.params.tensors();
  const auto tb = b.params.tensors();
  ASSERT_EQ(ta.size(), tb.size());
  for (std::size_t t = 0; t < ta.size(); ++t) {
    EXPECT_TRUE(std::equal(ta[t].begin(), ta[t].end(), tb[t].begin()));
  }
  auto check_layer = [](const Layer& l) {
    EXPECT_TRUE((l.bias.array() == 0.0).all());
    const double limit = std::sqrt(6.0 / static_cast<double>(l.weight.rows() + l.weight.cols()));
    EXPECT_LE(l.weight.cwiseAbs().maxCoeff(), limit);
  };
  for (const auto& l : a.params.trunk) check_layer(l);
  for (const auto& head : a.params.branches) {
    for (const auto& l : head) check_layer(l);
  }
  for (const auto& l : a.params.classifiers) check_layer(l);
}

TEST(InitModel, BranchHeadsShareShapesButNotValues) {
  const EmbeddingModel m = init_model(small_config(2));
  ASSERT_EQ(m.params.branches.size(), 2u);
  ASSERT_EQ(m.params.branches[0].size(), m.params.branches[1].size());
  for (std::size_t l = 0; l < m.params.branches[0].size(); ++l) {
    const auto& a = m.params.branches[0][l].weight;
    const auto& b = m.params.branches[1][l].weight;
    EXPECT_EQ(a.rows(), b.rows());
    EXPECT_EQ(a.cols(), b.cols());
    EXPECT_NE(a, b);
  }
  EXPECT_EQ(m.params.classifiers.size(), 2u);
}

TEST(InitModel, InvalidConfigIsRejected) {
  ModelConfig cfg = small_config(1);
  cfg.n_branches = 0;
  EXPECT_THROW(init_model(cfg), ConfigError);
  cfg = small_config(1);
  cfg.trunk_widths = {0};
  EXPECT_THROW(init_model(cfg), ConfigError);
  cfg = small_config(1);
  cfg.n_classes = 1;
  EXPECT_THROW(init_model(cfg), ConfigError);
}

TEST(Forward, ZeroParametersGiveZeroEmbeddings) {
  EmbeddingModel m = init_model(small_config(1));
  set_all(m.params, 0.0);
  std::mt19937_64 rng(1);
  const ForwardResult fwd = forward(m, random_matrix(5, 6, rng));
  for (const auto& e : fwd.outputs.embeddings) EXPECT_TRUE((e.array() == 0.0).all());
}

TEST(Forward, EqualBranchParametersGiveIdenticalEmbeddings) {
  EmbeddingModel m = init_model(small_config(3));
  m.params.branches[1] = m.params.branches[0];
  std::mt19937_64 rng(2);
  const ForwardResult fwd = forward(m, random_matrix(7, 6, rng));
  EXPECT_EQ(fwd.outputs.embeddings[0], fwd.outputs.embeddings[1]);
}

TEST(Forward, MatchesStraightLineArithmetic) {
  ModelConfig cfg = small_config(4);
  cfg.trunk_widths = {8, 5};
  cfg.branch_widths = {6};
  EmbeddingModel m = init_model(cfg);
  std::mt19937_64 rng(3);
  for (auto t : m.params.tensors()) {
    for (double& v : t) v += std::normal_distribution<double>(0.0, 0.1)(rng);
  }
  const Matrix x = random_matrix(4, 6, rng);
  const ForwardResult fwd = forward(m, x);
  for (int k = 0; k < 2; ++k) {
    for (int r = 0; r < 4; ++r) {
      const auto expected = reference_embedding(m, x, r, k);
      for (int c = 0; c < cfg.d_e; ++c) {
        EXPECT_NEAR(fwd.outputs.embeddings[static_cast<std::size_t>(k)](r, c), expected[static_cast<std::size_t>(c)],
                    1e-12);
      }
    }
  }
}

TEST(Forward, ShapeMismatchAndNonFiniteInputAreErrors) {
  const EmbeddingModel m = init_model(small_config(1));
  EXPECT_THROW(forward(m, Matrix::Zero(2, 5)), ConfigError);
  Matrix bad = Matrix::Zero(2, 6);
  bad(1, 3) = std::nan("");
  EXPECT_THROW(forward(m, bad), NumericalError);
}

TEST(Forward, NormalizationFlagGivesUnitRows) {
  ModelConfig cfg = small_config(6);
  cfg.normalize_embeddings = true;
  const EmbeddingModel m = init_model(cfg);
  std::mt19937_64 rng(4);
  const ForwardResult fwd = forward(m, random_matrix(5, 6, rng));
  for (const auto& e : fwd.outputs.embeddings) {
    for (Eigen::Index r = 0; r < e.rows(); ++r) EXPECT_NEAR(e.row(r).norm(), 1.0, 1e-12);
  }
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  const EmbeddingModel m = init_model(small_config(1));
  std::mt19937_64 rng(5);
  const ForwardResult fwd = forward(m, random_matrix(3, 6, rng));
  const Parameters g = backward(m, fwd.cache, {Matrix::Zero(3, 4), Matrix::Zero(3, 4)}, {});
  for (auto t : g.tensors()) {
    for (double v : t) EXPECT_EQ(v, 0.0);
  }
}

TEST(Backward, BranchIsolation) {
  const EmbeddingModel m = init_model(small_config(7));
  std::mt19937_64 rng(6);
  const ForwardResult fwd = forward(m, random_matrix(6, 6, rng));
  const Parameters g = backward(m, fwd.cache, {random_matrix(6, 4, rng), Matrix::Zero(6, 4)}, {});
  for (const auto& layer : g.branches[1]) {
    EXPECT_TRUE((layer.weight.array() == 0.0).all());
    EXPECT_TRUE((layer.bias.array() == 0.0).all());
  }
  double trunk_mass = 0.0;
  for (const auto& layer : g.trunk) trunk_mass += layer.weight.cwiseAbs().sum();
  EXPECT_GT(trunk_mass, 0.0);
}

TEST(Backward, StaleCacheIsRejected) {
  const EmbeddingModel small = init_model(small_config(1));
  ModelConfig wide = small_config(1);
  wide.trunk_widths = {9};
  const EmbeddingModel other = init_model(wide);
  std::mt19937_64 rng(7);
  const ForwardResult fwd = forward(small, random_matrix(3, 6, rng));
  EXPECT_THROW(backward(other, fwd.cache, {Matrix::Zero(3, 4), Matrix::Zero(3, 4)}, {}), ConfigError);
}

TEST(Backward, SumOfEmbeddingsMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const EmbeddingModel m = init_model(small_config(seed));
    std::mt19937_64 rng(seed);
    const GradientCheckReport r = finite_difference_check(m, sum_of_embeddings(random_matrix(3, 6, rng)), 1e-5, 1e-4);
    EXPECT_TRUE(r.passed) << "seed " << seed << " error " << r.max_relative_error;
    EXPECT_GT(r.checked, r.skipped);
  }
}

TEST(Backward, NormalizedEmbeddingsMatchFiniteDifferences) {
  ModelConfig cfg = small_config(8);
  cfg.normalize_embeddings = true;
  const EmbeddingModel m = init_model(cfg);
  std::mt19937_64 rng(8);
  const Matrix x = random_matrix(4, 6, rng);
  const Matrix target = random_matrix(4, 4, rng);
  const ScalarLossFn loss = [&](const EmbeddingModel& model, bool want_gradient) {
    const ForwardResult fwd = forward(model, x);
    LossEvaluation eval;
    std::vector<Matrix> grads;
    for (const auto& e : fwd.outputs.embeddings) {
      eval.value += (e.array() * target.array()).sum();
      grads.push_back(target);
    }
    eval.region = activation_signature(fwd.cache);
    if (want_gradient) eval.gradient = backward(model, fwd.cache, grads, {});
    return eval;
  };
  const GradientCheckReport r = finite_difference_check(m, loss, 1e-5, 1e-4);
  EXPECT_TRUE(r.passed) << r.max_relative_error;
}

TEST(FiniteDifferenceCheck, QuadraticLossPasses) {
  const EmbeddingModel m = init_model(small_config(9));
  std::mt19937_64 rng(9);
  const GradientCheckReport r = finite_difference_check(m, squared_norm(random_matrix(4, 6, rng)), 1e-5, 1e-4);
  EXPECT_TRUE(r.passed) << r.max_relative_error;
}

TEST(FiniteDifferenceCheck, ConstantLossPasses) {
  const EmbeddingModel m = init_model(small_config(10));
  const ScalarLossFn constant = [](const EmbeddingModel& model, bool want_gradient) {
    LossEvaluation eval;
    eval.value = 3.0;
    if (want_gradient) eval.gradient = model.params.zeros_like();
    return eval;
  };
  const GradientCheckReport r = finite_difference_check(m, constant, 1e-5, 1e-4);
  EXPECT_TRUE(r.passed);
  EXPECT_EQ(r.max_relative_error, 0.0);
}

TEST(FiniteDifferenceCheck, TamperedGradientFails) {
  const EmbeddingModel m = init_model(small_config(11));
  std::mt19937_64 rng(11);
  const ScalarLossFn honest = squared_norm(random_matrix(4, 6, rng));
  const ScalarLossFn tampered = [&](const EmbeddingModel& model, bool want_gradient) {
    LossEvaluation eval = honest(model, want_gradient);
    if (eval.gradient) eval.gradient->branches[0].back().weight(0, 0) *= -1.0;
    return eval;
  };
  const GradientCheckReport r = finite_difference_check(m, tampered, 1e-5, 1e-4);
  EXPECT_FALSE(r.passed);
  EXPECT_GT(r.max_relative_error, 1e-4);
}

TEST(Adam, SingleStepFromZero) {
  std::vector<double> theta{0.0};
  const std::vector<double> grad{1.0};
  std::vector<double> m{0.0};
  std::vector<double> v{0.0};
  adam_update(theta, grad, m, v, 0.001, 1, 0.9, 0.999, 1e-8);
  // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
  EXPECT_DOUBLE_EQ(theta[0], -0.001 / (1.0 + 1e-8));
  EXPECT_NEAR(theta[0], -0.00099999999, 1e-14);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  EmbeddingModel m = init_model(small_config(12));
  const EmbeddingModel before = m;
  AdamState state = make_adam_state(m.params);
  adam_step(state, m, m.params.zeros_like(), 0.01);
  EXPECT_EQ(state.step, 1);
  const auto a = m.params.tensors();
  const auto b = before.params.tensors();
  for (std::size_t t = 0; t < a.size(); ++t) EXPECT_TRUE(std::equal(a[t].begin(), a[t].end(), b[t].begin()));
}

TEST(Adam, RepeatedGradientMovesOppositeItsSign) {
  EmbeddingModel m = init_model(small_config(13));
  AdamState state = make_adam_state(m.params);
  Parameters g = m.params.zeros_like();
  g.trunk[0].weight(0, 0) = 0.5;
  g.trunk[0].weight(1, 0) = -2.0;
  const double w0 = m.params.trunk[0].weight(0, 0);
  const double w1 = m.params.trunk[0].weight(1, 0);
  adam_step(state, m, g, 0.01);
  const double w0_mid = m.params.trunk[0].weight(0, 0);
  const double w1_mid = m.params.trunk[0].weight(1, 0);
  adam_step(state, m, g, 0.01);
  EXPECT_LT(w0_mid, w0);
  EXPECT_LT(m.params.trunk[0].weight(0, 0), w0_mid);
  EXPECT_GT(w1_mid, w1);
  EXPECT_GT(m.params.trunk[0].weight(1, 0), w1_mid);
}

TEST(Adam, NonFiniteGradientAbortsWithoutChanges) {
  EmbeddingModel m = init_model(small_config(14));
  const EmbeddingModel before = m;
  AdamState state = make_adam_state(m.params);
  Parameters g = m.params.zeros_like();
  g.trunk[0].weight(0, 0) = 1.0;
  g.classifiers[1].bias(0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(adam_step(state, m, g, 0.01), NumericalError);
  EXPECT_EQ(m.params.trunk[0].weight, before.params.trunk[0].weight);
  EXPECT_EQ(state.step, 0);
}

TEST(ModelCheckpoint, RoundTripsExactly) {
  ModelConfig cfg = small_config(15);
  cfg.trunk_widths = {8, 7};
  const EmbeddingModel m = init_model(cfg);
  const BranchLayout layout = BranchLayout::two_space(ViewpointSet(2));
  std::stringstream buffer;
  write_model(buffer, m, layout);
  const std::string text = buffer.str();
  EXPECT_EQ(text.rfind("#viewmetric-model v1", 0), 0u);
  EXPECT_NE(text.find("n_branches=2"), std::string::npos);
  EXPECT_NE(text.find("branch_spaces=front-front,rear-rear;front-rear,rear-front"), std::string::npos);
  const LoadedModel back = read_model(buffer);
  EXPECT_EQ(back.model.config, m.config);
  EXPECT_EQ(back.layout, layout);
  const auto a = back.model.params.tensors();
  const auto b = m.params.tensors();
  for (std::size_t t = 0; t < a.size(); ++t) EXPECT_TRUE(std::equal(a[t].begin(), a[t].end(), b[t].begin()));
  std::stringstream again;
  write_model(again, back.model, back.layout);
  EXPECT_EQ(again.str(), text);
}

TEST(ModelCheckpoint, RejectsVersionAndShapeProblems) {
  const EmbeddingModel m = init_model(small_config(16));
  const BranchLayout layout = BranchLayout::two_space(ViewpointSet(2));
  std::stringstream buffer;
  write_model(buffer, m, layout);
  const std::string text = buffer.str();

  std::string wrong_version = text;
  wrong_version.replace(wrong_version.find("v1"), 2, "v7");
  std::stringstream a(wrong_version);
  EXPECT_THROW(read_model(a), ConfigError);

  std::stringstream truncated(text.substr(0, text.size() - 40));
  EXPECT_THROW(read_model(truncated), ConfigError);

  std::stringstream extended(text + "1.0\n");
  EXPECT_THROW(read_model(extended), ConfigError);

  std::stringstream mismatch;
  EXPECT_THROW(write_model(mismatch, m, BranchLayout::single(ViewpointSet(2))), ConfigError);
}
