#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "viewmetric/branch_layout.hpp"
#include "viewmetric/common.hpp"
#include "viewmetric/embedding_model.hpp"

namespace viewmetric {

/// Added to the distance in the Euclidean-norm derivative.
inline constexpr double kDistanceGradGuard = 1e-12;

enum class LossTerm { s_view, d_view, cross, triplet };

/// Batch-hard picks for one loss term. Index -1 marks a missing positive or negative.
struct TripletSelection {
  LossTerm term = LossTerm::triplet;
  std::vector<int> positive;
  std::vector<int> negative;
  std::vector<bool> valid;
  /// max(D+ - D- + alpha, 0) per anchor, 0 for invalid anchors.
  std::vector<double> hinge;

  int valid_count() const;
};

struct TripletLoss {
  double loss = 0.0;
  TripletSelection selection;
};

/// Entry (i, j) is the Euclidean distance between rows i and j; the diagonal is exactly 0.
Matrix pairwise_distances(const Matrix& embeddings);

/// Relation masks from predicted viewpoints. s_mask includes the diagonal, d_mask never does.
std::pair<Mask, Mask> relation_masks(std::span<const Viewpoint> predicted);

Mask identity_mask(std::span<const int> ids);

/// Per-branch distance matrices plus the masks that decide which cells each loss reads.
struct DistanceMatrices {
  std::vector<Matrix> per_branch;
  /// owner(a, j): branch whose space measures the ordered pair (a, j).
  Eigen::ArrayXXi owner;
  Mask s_mask;
  Mask d_mask;
  Mask id_equal;

  Eigen::Index size() const { return owner.rows(); }
  /// Cell (a, j) taken from the owning branch's matrix.
  Matrix integrated() const;
  /// Cells owned by one branch, diagonal excluded.
  Mask branch_mask(int branch) const;
};

DistanceMatrices build_distance_matrices(const BranchEmbeddings& emb, std::span<const Viewpoint> predicted,
                                         std::span<const int> ids, const BranchLayout& layout);

/// Batch-hard triplet loss restricted to `mask` cells: for every anchor the
/// farthest positive and nearest negative among its masked cells; mean hinge
/// over anchors that have both. Ties go to the lowest index.
TripletLoss within_space_loss(const Matrix& distances, const Mask& mask, const Mask& id_equal, double alpha);

/// Hardest D-view positive measured in `positive_space` against the hardest
/// S-view negative measured in `negative_space`, mined independently per anchor.
TripletLoss cross_space_loss(const Matrix& positive_space, const Matrix& negative_space, const Mask& d_mask,
                             const Mask& s_mask, const Mask& id_equal, double alpha);

struct CrossEntropyResult {
  double loss = 0.0;
  std::vector<Matrix> grad_logits;
};

/// Softmax cross-entropy averaged over samples and branch heads.
CrossEntropyResult id_cross_entropy(const std::vector<Matrix>& logits, std::span<const int> ids);

struct LossConfig {
  BranchLayout layout;
  double alpha = 0.5;
  double lambda_ce = 1.0;
  bool use_within = true;
  bool use_cross = true;

  void validate() const;
};

struct LossValues {
  double l_s = 0.0;
  double l_d = 0.0;
  double l_cross = 0.0;
  double l_ce = 0.0;
  double l_total = 0.0;
  int valid_s = 0;
  int valid_d = 0;
  int valid_cross = 0;
};

struct LossReport {
  LossValues values;
  /// One selection per branch; empty when within-space terms are disabled.
  std::vector<TripletSelection> within;
  std::vector<double> within_per_branch;
  std::optional<TripletSelection> cross;
};

/// Triplet terms only, read straight from distance matrices. S-like and mixed
/// branches add to L_s, D-like branches to L_d.
LossReport triplet_terms(const DistanceMatrices& dm, const LossConfig& cfg);

struct TotalLoss {
  LossReport report;
  std::vector<Matrix> grad_embeddings;
  std::vector<Matrix> grad_logits;
};

/// L_total = L_s + L_d + L_cross + lambda_ce * L_ce with analytic gradients
/// with respect to every branch embedding and logit matrix.
TotalLoss total_loss(const BranchEmbeddings& emb, std::span<const Viewpoint> predicted, std::span<const int> ids,
                     const LossConfig& cfg);

/// Hash of every mined index and active hinge; stable within one smooth region of the loss.
std::uint64_t selection_signature(const LossReport& report);

void write_loss_csv_header(std::ostream& out);
void write_loss_csv_row(std::ostream& out, long long step, const LossValues& values);

}  // namespace viewmetric
