#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "viewmetric/branch_layout.hpp"
#include "viewmetric/common.hpp"

namespace viewmetric {

struct ModelConfig {
  int d_x = 32;
  std::vector<int> trunk_widths{64};
  std::vector<int> branch_widths{64};
  int d_e = 32;
  int n_branches = 2;
  int n_classes = 2;
  bool use_ce_head = true;
  /// Unit-normalizes each embedding. Off by default.
  bool normalize_embeddings = false;
  std::uint64_t init_seed = 1;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Affine map y = W x + b; `weight` is out x in.
struct Layer {
  Matrix weight;
  Vector bias;
};

/// Every trainable tensor of the network, in declared order: trunk layers,
/// then each branch head's layers, then the per-branch ID classifiers.
/// Gradients and optimizer moments reuse this shape.
struct Parameters {
  std::vector<Layer> trunk;
  std::vector<std::vector<Layer>> branches;
  std::vector<Layer> classifiers;

  /// Flat views of every weight and bias tensor, in declared order.
  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;
  Parameters zeros_like() const;
  std::size_t count() const;
  bool all_finite() const;
};

struct EmbeddingModel {
  ModelConfig config;
  Parameters params;
};

/// Per-branch embeddings (N x d_e) and, with the ID head enabled, logits (N x n_classes).
struct BranchEmbeddings {
  std::vector<Matrix> embeddings;
  std::vector<Matrix> logits;

  int n_branches() const { return static_cast<int>(embeddings.size()); }
  Eigen::Index rows() const { return embeddings.empty() ? 0 : embeddings.front().rows(); }
};

/// Activations recorded by forward() for backward().
struct ForwardCache {
  Matrix input;
  std::vector<Matrix> trunk_pre;
  std::vector<Matrix> trunk_post;
  std::vector<std::vector<Matrix>> branch_pre;
  std::vector<std::vector<Matrix>> branch_post;
  /// Branch outputs before optional normalization.
  std::vector<Matrix> raw_embeddings;
  std::vector<Matrix> embeddings;

  Eigen::Index batch_size() const { return input.rows(); }
};

EmbeddingModel init_model(const ModelConfig& cfg);

struct ForwardResult {
  BranchEmbeddings outputs;
  ForwardCache cache;
};

/// Shared trunk once per row, then every branch head on the trunk output.
/// Hidden layers are rectified; the last branch layer is linear.
ForwardResult forward(const EmbeddingModel& model, const Matrix& x);

/// Gradients of every parameter. `grad_logits` may be empty when no
/// classification loss is applied.
Parameters backward(const EmbeddingModel& model, const ForwardCache& cache,
                    const std::vector<Matrix>& grad_embeddings, const std::vector<Matrix>& grad_logits);

/// Hash of the rectifier on/off pattern; changes exactly when a pre-activation crosses zero.
std::uint64_t activation_signature(const ForwardCache& cache);

struct AdamState {
  Parameters first_moment;
  Parameters second_moment;
  long long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

AdamState make_adam_state(const Parameters& params, double epsilon = 1e-8);

/// One bias-corrected Adam update on flat buffers. `step` is the already
/// incremented step counter t >= 1.
void adam_update(std::span<double> theta, std::span<const double> grad, std::span<double> first_moment,
                 std::span<double> second_moment, double lr, long long step, double beta1, double beta2,
                 double epsilon);

/// Throws NumericalError on a non-finite gradient before touching any parameter.
void adam_step(AdamState& state, EmbeddingModel& model, const Parameters& grads, double lr);

struct LossEvaluation {
  double value = 0.0;
  /// Identifies the piecewise-smooth region the evaluation landed in
  /// (rectifier pattern, mined triplets, active hinges).
  std::uint64_t region = 0;
  /// Filled only when requested.
  std::optional<Parameters> gradient;
};

using ScalarLossFn = std::function<LossEvaluation(const EmbeddingModel&, bool want_gradient)>;

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool passed = false;
};

/// Compares analytic gradients against central differences, one parameter at a
/// time. Relative error is |a - n| / max(|a|, |n|, 1e-8). Parameters whose
/// +/- step probes land in a different smooth region than the base point
/// (a rectifier or hinge kink lies within the step) are skipped.
GradientCheckReport finite_difference_check(const EmbeddingModel& model, const ScalarLossFn& loss, double step,
                                            double tolerance);

void write_model(std::ostream& out, const EmbeddingModel& model, const BranchLayout& layout);
void save_model(const std::string& path, const EmbeddingModel& model, const BranchLayout& layout);

struct LoadedModel {
  EmbeddingModel model;
  BranchLayout layout;
};

LoadedModel read_model(std::istream& in);
LoadedModel load_model(const std::string& path);

}  // namespace viewmetric
