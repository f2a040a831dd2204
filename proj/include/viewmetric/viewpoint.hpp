#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "viewmetric/common.hpp"
#include "viewmetric/synth_data.hpp"

namespace viewmetric {

enum class Relation : std::uint8_t { s_view, d_view };

/// S-view iff both images share a viewpoint.
Relation pair_relation(Viewpoint a, Viewpoint b);

/// Same as above, rejecting labels outside `set`.
Relation pair_relation(const ViewpointSet& set, Viewpoint a, Viewpoint b);

/// Affine softmax classifier over raw features.
struct ViewpointClassifier {
  Matrix weights;  // V x d_x
  Vector bias;     // V
  ViewpointSet viewpoints;

  int d_x() const { return static_cast<int>(weights.cols()); }
  /// Affine scores for one feature row.
  Vector scores(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
};

struct PredictionSet {
  std::vector<Viewpoint> predicted;
  double sigma_applied = 0.0;

  std::size_t size() const { return predicted.size(); }
  /// Predictions for a subset of samples, in the given order.
  std::vector<Viewpoint> gather(const std::vector<int>& indices) const;
};

/// Full-batch gradient descent on softmax cross-entropy against ground-truth viewpoints.
/// Weights start from a small seeded uniform draw.
ViewpointClassifier train_viewpoint_classifier(const Dataset& train, int epochs, double lr,
                                               std::uint64_t seed);

/// Argmax of affine scores; ties go to the lowest viewpoint index.
PredictionSet predict_viewpoints(const ViewpointClassifier& clf, const Dataset& ds);

/// Replaces exactly round(sigma * N) predictions, chosen without replacement,
/// by a uniformly drawn different viewpoint.
PredictionSet inject_errors(const PredictionSet& preds, double sigma, const ViewpointSet& set,
                            std::uint64_t seed);

/// Fraction of predictions that agree with the dataset's ground-truth viewpoints.
double prediction_accuracy(const PredictionSet& preds, const Dataset& ds);

void write_classifier(std::ostream& out, const ViewpointClassifier& clf);
ViewpointClassifier read_classifier(std::istream& in);
void save_classifier(const std::string& path, const ViewpointClassifier& clf);
ViewpointClassifier load_classifier(const std::string& path);

/// CSV `index,true_viewpoint,predicted_viewpoint`.
void write_predictions_csv(std::ostream& out, const PredictionSet& preds, const Dataset& ds);

}  // namespace viewmetric
