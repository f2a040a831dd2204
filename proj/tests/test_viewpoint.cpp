#include <gtest/gtest.h>

#include <sstream>

#include "viewmetric/branch_layout.hpp"
#include "viewmetric/viewpoint.hpp"

using namespace viewmetric;

namespace {

Dataset calibration_data(std::uint64_t seed) {
  GenConfig cfg;
  cfg.n_ids = 80;
  cfg.seed = seed;
  return generate_dataset(cfg);
}

ViewpointClassifier fixed_classifier(double front_score, double rear_score) {
  ViewpointClassifier clf;
  clf.viewpoints = ViewpointSet(2);
  clf.weights = Matrix::Zero(2, 1);
  clf.bias = Vector(2);
  clf.bias << front_score, rear_score;
  return clf;
}

Dataset one_sample() {
  Dataset ds;
  ds.d_x = 1;
  ds.viewpoints = ViewpointSet(2);
  ds.original_ids = {0};
  ds.samples = {{0, Viewpoint::rear, {0.5}}};
  return ds;
}

PredictionSet constant_predictions(std::size_t n, Viewpoint v) {
  PredictionSet p;
  p.predicted.assign(n, v);
  return p;
}

}  // namespace

TEST(PairRelation, DefinitionalCases) {
  EXPECT_EQ(pair_relation(Viewpoint::front, Viewpoint::front), Relation::s_view);
  EXPECT_EQ(pair_relation(Viewpoint::rear, Viewpoint::rear), Relation::s_view);
  EXPECT_EQ(pair_relation(Viewpoint::front, Viewpoint::rear), Relation::d_view);
  EXPECT_EQ(pair_relation(Viewpoint::rear, Viewpoint::front), Relation::d_view);
  EXPECT_EQ(pair_relation(ViewpointSet(3), Viewpoint::side, Viewpoint::side), Relation::s_view);
}

TEST(PairRelation, SymmetricAndReflexive) {
  const ViewpointSet set(3);
  for (Viewpoint a : set.labels()) {
    EXPECT_EQ(pair_relation(set, a, a), Relation::s_view);
    for (Viewpoint b : set.labels()) EXPECT_EQ(pair_relation(set, a, b), pair_relation(set, b, a));
  }
}

TEST(PairRelation, RejectsLabelsOutsideTheSet) {
  EXPECT_THROW(pair_relation(ViewpointSet(2), Viewpoint::side, Viewpoint::front), ConfigError);
}

TEST(ViewpointClassifierTraining, SeparatesCalibrationViewpoints) {
  const DatasetSplit split = split_by_id(calibration_data(1), 0.375, 2);
  const ViewpointClassifier clf = train_viewpoint_classifier(split.train, 300, 0.05, 3);
  EXPECT_GE(prediction_accuracy(predict_viewpoints(clf, split.test), split.test), 0.98);
  EXPECT_GE(prediction_accuracy(predict_viewpoints(clf, split.train), split.train), 0.98);
}

TEST(ViewpointClassifierTraining, IndistinguishableViewsGiveChanceAccuracy) {
  GenConfig cfg;
  cfg.n_ids = 200;
  cfg.viewpoint_gap = 0.0;
  cfg.within_view_noise = 0.0;
  const Dataset ds = generate_dataset(cfg, GenOverrides{true});
  const DatasetSplit split = split_by_id(ds, 0.5, 4);
  const ViewpointClassifier clf = train_viewpoint_classifier(split.train, 200, 0.05, 5);
  EXPECT_NEAR(prediction_accuracy(predict_viewpoints(clf, split.test), split.test), 0.5, 0.1);
}

TEST(ViewpointClassifierTraining, DeterministicUnderSeed) {
  const Dataset ds = calibration_data(2);
  const ViewpointClassifier a = train_viewpoint_classifier(ds, 50, 0.05, 11);
  const ViewpointClassifier b = train_viewpoint_classifier(ds, 50, 0.05, 11);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.bias, b.bias);
}

TEST(ViewpointClassifierTraining, AbsentViewpointIsAnError) {
  Dataset ds = calibration_data(1);
  std::erase_if(ds.samples, [](const Sample& s) { return s.viewpoint == Viewpoint::rear; });
  EXPECT_THROW(train_viewpoint_classifier(ds, 10, 0.05, 1), ConfigError);
}

TEST(PredictViewpoints, ArgmaxAndLowestIndexTies) {
  EXPECT_EQ(predict_viewpoints(fixed_classifier(2.0, -1.0), one_sample()).predicted[0], Viewpoint::front);
  EXPECT_EQ(predict_viewpoints(fixed_classifier(-1.0, 2.0), one_sample()).predicted[0], Viewpoint::rear);
  const PredictionSet tie = predict_viewpoints(fixed_classifier(0.0, 0.0), one_sample());
  EXPECT_EQ(tie.predicted[0], Viewpoint::front);
  EXPECT_EQ(tie.sigma_applied, 0.0);
}

TEST(PredictViewpoints, DimensionMismatchIsAnError) {
  const ViewpointClassifier clf = fixed_classifier(0.0, 0.0);
  EXPECT_THROW(predict_viewpoints(clf, calibration_data(1)), ConfigError);
}

TEST(InjectErrors, ZeroSigmaIsIdentity) {
  const PredictionSet p = constant_predictions(37, Viewpoint::rear);
  const PredictionSet q = inject_errors(p, 0.0, ViewpointSet(2), 1);
  EXPECT_EQ(q.predicted, p.predicted);
  EXPECT_EQ(q.sigma_applied, 0.0);
}

TEST(InjectErrors, FullSigmaFlipsEveryBinaryPrediction) {
  PredictionSet p = constant_predictions(10, Viewpoint::front);
  for (std::size_t i = 0; i < 10; i += 3) p.predicted[i] = Viewpoint::rear;
  const PredictionSet q = inject_errors(p, 1.0, ViewpointSet(2), 2);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_NE(q.predicted[i], p.predicted[i]);
  EXPECT_EQ(q.sigma_applied, 1.0);
}

TEST(InjectErrors, ChangesExactlyRoundedCount) {
  for (int v : {2, 3}) {
    for (double sigma : {0.05, 0.1, 0.2, 0.333}) {
      for (std::uint64_t seed = 1; seed <= 4; ++seed) {
        const PredictionSet p = constant_predictions(200, Viewpoint::front);
        const PredictionSet q = inject_errors(p, sigma, ViewpointSet(v), seed);
        int changed = 0;
        for (std::size_t i = 0; i < p.size(); ++i) changed += q.predicted[i] != p.predicted[i];
        EXPECT_EQ(changed, std::llround(sigma * 200));
        EXPECT_EQ(q.sigma_applied, sigma);
      }
    }
  }
}

TEST(InjectErrors, OutOfRangeSigmaIsAnError) {
  const PredictionSet p = constant_predictions(4, Viewpoint::front);
  EXPECT_THROW(inject_errors(p, -0.1, ViewpointSet(2), 1), ConfigError);
  EXPECT_THROW(inject_errors(p, 1.5, ViewpointSet(2), 1), ConfigError);
}

TEST(ClassifierFile, RoundTripsExactly) {
  const ViewpointClassifier clf = train_viewpoint_classifier(calibration_data(3), 20, 0.05, 7);
  std::stringstream buffer;
  write_classifier(buffer, clf);
  EXPECT_EQ(buffer.str().rfind("#viewmetric-vpclf v1", 0), 0u);
  const ViewpointClassifier back = read_classifier(buffer);
  EXPECT_EQ(back.weights, clf.weights);
  EXPECT_EQ(back.bias, clf.bias);
  EXPECT_EQ(back.viewpoints, clf.viewpoints);
  std::stringstream truncated(buffer.str().substr(0, buffer.str().size() / 2));
  EXPECT_THROW(read_classifier(truncated), ConfigError);
}

TEST(PredictionsCsv, HeaderAndRows) {
  const Dataset ds = one_sample();
  std::ostringstream out;
  write_predictions_csv(out, constant_predictions(1, Viewpoint::front), ds);
  EXPECT_EQ(out.str(), "index,true_viewpoint,predicted_viewpoint\n0,rear,front\n");
}

TEST(BranchLayouts, TwoViewpointPartitions) {
  const ViewpointSet set(2);
  const auto f = Viewpoint::front;
  const auto r = Viewpoint::rear;

  const BranchLayout single = BranchLayout::granular(set, 1);
  EXPECT_EQ(single.branch_of(f, r), 0);
  EXPECT_EQ(single.kinds(), "M");

  const BranchLayout two = BranchLayout::granular(set, 2);
  EXPECT_EQ(two.describe(), "front-front,rear-rear;front-rear,rear-front");
  EXPECT_EQ(two.kinds(), "SD");

  const BranchLayout three = BranchLayout::granular(set, 3);
  EXPECT_EQ(three.describe(), "front-front;rear-rear;front-rear,rear-front");
  EXPECT_EQ(three.kinds(), "SSD");

  const BranchLayout four = BranchLayout::granular(set, 4);
  EXPECT_EQ(four.branch_of(f, f), 0);
  EXPECT_EQ(four.branch_of(r, r), 1);
  EXPECT_NE(four.branch_of(f, r), four.branch_of(r, f));
  EXPECT_EQ(four.kinds(), "SSDD");

  EXPECT_THROW(BranchLayout::granular(set, 5), ConfigError);
}

TEST(BranchLayouts, DescribeParsesBack) {
  for (int v : {2, 3}) {
    const ViewpointSet set(v);
    for (int k : {1, 2, v + 1, v * v}) {
      const BranchLayout layout = BranchLayout::granular(set, k);
      EXPECT_EQ(BranchLayout::parse(layout.describe(), set), layout) << layout.describe();
    }
  }
  EXPECT_THROW(BranchLayout::parse("front-front;rear-rear", ViewpointSet(2)), ConfigError);
  EXPECT_THROW(BranchLayout::parse("front-front,front-front;rear-rear,front-rear,rear-front", ViewpointSet(2)),
               ConfigError);
}
