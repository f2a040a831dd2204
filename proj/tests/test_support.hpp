#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "viewmetric/embedding_model.hpp"
#include "viewmetric/viewpoint_loss.hpp"

namespace viewmetric::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  }
  return m;
}

/// Random symmetric matrix with zero diagonal and positive off-diagonal entries.
inline Matrix random_distances(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 3.0);
  Matrix d = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) d(i, j) = d(j, i) = u(rng);
  }
  return d;
}

/// n samples over n_ids identities (every identity at least twice) with random viewpoints.
struct RandomBatch {
  std::vector<int> ids;
  std::vector<Viewpoint> predicted;
};

inline RandomBatch random_batch(int n, int n_ids, int n_viewpoints, std::mt19937_64& rng) {
  RandomBatch b;
  std::uniform_int_distribution<int> id_pick(0, n_ids - 1);
  std::uniform_int_distribution<int> vp_pick(0, n_viewpoints - 1);
  for (int i = 0; i < n; ++i) {
    b.ids.push_back(i < 2 * n_ids ? i / 2 : id_pick(rng));
    b.predicted.push_back(static_cast<Viewpoint>(vp_pick(rng)));
  }
  std::shuffle(b.ids.begin(), b.ids.end(), rng);
  return b;
}

/// Exhaustive reference for batch-hard mining: scans every mask-valid triplet
/// (a, p, n) and keeps the one with the largest D+(a,p) - D-(a,n), earliest
/// (p, n) first on ties.
struct OracleTriplets {
  std::vector<int> positive;
  std::vector<int> negative;
  double loss = 0.0;
  int valid = 0;
};

inline OracleTriplets enumerate_triplets(const Matrix& pos_space, const Matrix& neg_space, const Mask& pos_mask,
                                         const Mask& neg_mask, const Mask& id_equal, double alpha) {
  const auto n = pos_space.rows();
  OracleTriplets out;
  double total = 0.0;
  for (Eigen::Index a = 0; a < n; ++a) {
    int best_p = -1;
    int best_n = -1;
    double best = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) {
      if (p == a || !id_equal(a, p) || !pos_mask(a, p)) continue;
      for (Eigen::Index q = 0; q < n; ++q) {
        if (id_equal(a, q) || !neg_mask(a, q)) continue;
        const double gap = pos_space(a, p) - neg_space(a, q);
        if (best_p < 0 || gap > best) {
          best = gap;
          best_p = static_cast<int>(p);
          best_n = static_cast<int>(q);
        }
      }
    }
    out.positive.push_back(best_p);
    out.negative.push_back(best_n);
    if (best_p >= 0) {
      ++out.valid;
      total += std::max(best + alpha, 0.0);
    }
  }
  out.loss = out.valid > 0 ? total / out.valid : 0.0;
  return out;
}

/// forward + total_loss on a fixed batch, exposing the smooth-region signature.
inline ScalarLossFn composite_loss(const Matrix& x, std::vector<Viewpoint> predicted, std::vector<int> ids,
                                   LossConfig cfg) {
  return [x, predicted = std::move(predicted), ids = std::move(ids), cfg = std::move(cfg)](
             const EmbeddingModel& model, bool want_gradient) {
    const ForwardResult fwd = forward(model, x);
    const TotalLoss loss = total_loss(fwd.outputs, predicted, ids, cfg);
    LossEvaluation eval;
    eval.value = loss.report.values.l_total;
    eval.region = mix_hash(activation_signature(fwd.cache), selection_signature(loss.report));
    if (want_gradient) eval.gradient = backward(model, fwd.cache, loss.grad_embeddings, loss.grad_logits);
    return eval;
  };
}

}  // namespace viewmetric::testing
