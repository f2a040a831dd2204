#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "viewmetric/branch_layout.hpp"
#include "viewmetric/embedding_model.hpp"
#include "viewmetric/synth_data.hpp"
#include "viewmetric/viewpoint.hpp"

namespace viewmetric {

/// Forward pass over every sample of `ds`; the model is not modified.
BranchEmbeddings embed_all(const EmbeddingModel& model, const Dataset& ds);

/// Distance of samples i and j in the S-space when their predicted viewpoints
/// agree, otherwise in the D-space.
double conditional_distance(int i, int j, std::span<const Viewpoint> predicted, const Matrix& s_space,
                            const Matrix& d_space);

/// All-pairs conditional distances: cell (i, j) is measured in the branch that
/// owns the predicted viewpoint pair (pred_i, pred_j).
Matrix conditional_distance_matrix(const BranchEmbeddings& emb, std::span<const Viewpoint> predicted,
                                   const BranchLayout& layout);

/// One gallery image per identity, every other image is a query.
struct GallerySplit {
  std::vector<int> query;
  std::vector<int> gallery;
  std::uint64_t seed = 0;
};

std::vector<GallerySplit> make_splits(std::span<const int> ids, int n_trials, std::uint64_t seed);

/// Gallery indices ordered by ascending distance to `query`, ties by lower index.
std::vector<int> rank_gallery(const Matrix& distances, int query, std::span<const int> gallery);

/// Fraction of queries whose true match appears within the top r, for each r in `ranks`.
std::vector<double> cmc(const Matrix& distances, std::span<const int> ids, const GallerySplit& split,
                        std::span<const int> ranks);

/// Rows are queries, columns gallery items. Ties are ranked by lower column index.
double mean_average_precision(const Matrix& distances, const Mask& relevance);

struct ViewpointMetrics {
  std::optional<double> top1_s;
  std::optional<double> top1_d;
  std::optional<double> top1_s_star;
  std::optional<double> top1_d_star;
  int s_queries = 0;
  int d_queries = 0;
};

/// Queries are grouped by the ground-truth relation to their true match. The
/// starred metrics drop every gallery image whose relation to the query differs
/// from that of the true match. Empty groups stay absent.
ViewpointMetrics viewpoint_protocol(const Matrix& distances, std::span<const int> ids, const GallerySplit& split,
                                    std::span<const Viewpoint> true_viewpoints);

struct TrialResult {
  double top1 = 0.0;
  double top5 = 0.0;
  double top20 = 0.0;
  double map = 0.0;
  ViewpointMetrics viewpoint;
};

struct EvalReport {
  std::vector<TrialResult> trials;
  /// Mean over trials; viewpoint metrics average the trials where they exist.
  TrialResult aggregate;
};

EvalReport evaluate(const Matrix& distances, std::span<const int> ids, std::span<const Viewpoint> true_viewpoints,
                    const std::vector<GallerySplit>& splits);

enum PairClass { kSViewPos = 0, kSViewNeg = 1, kDViewPos = 2, kDViewNeg = 3 };

struct HistogramSet {
  std::vector<double> edges;  // n_bins + 1
  std::array<std::vector<long long>, 4> counts;
  /// Sum over bins of min(p, q) for normalized D-view-pos (p) and S-view-neg (q).
  double overlap = 0.0;
};

/// Histograms of every unordered pair's distance, by ground-truth pair class.
HistogramSet distance_histograms(const Matrix& distances, std::span<const int> ids,
                                 std::span<const Viewpoint> true_viewpoints, int n_bins);

double overlap_coefficient(std::span<const long long> p, std::span<const long long> q);

void write_eval_csv(std::ostream& out, const EvalReport& report);
void write_histogram_csv(std::ostream& out, const HistogramSet& hist);
/// Static line plot of the four normalized histograms.
void write_histogram_svg(std::ostream& out, const HistogramSet& hist, const std::string& title);

}  // namespace viewmetric
