#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "viewmetric/synth_data.hpp"
#include "viewmetric/viewpoint.hpp"

namespace viewmetric {

/// Which pair relations a branch's metric is responsible for.
enum class BranchKind { s_view, d_view, mixed };

/// Assigns every ordered (anchor viewpoint, other viewpoint) pair to one branch.
///
/// The layouts used in practice:
///  - single:  one branch for every pair (the plain triplet baseline);
///  - two-space: branch 0 owns all S-view pairs, branch 1 all D-view pairs;
///  - granular(K): finer partitions, e.g. for two viewpoints K=3 gives
///    (front-front), (rear-rear), (front/rear) and K=4 gives
///    (front-front), (rear-rear), (front-rear), (rear-front).
class BranchLayout {
 public:
  static BranchLayout single(const ViewpointSet& set);
  static BranchLayout two_space(const ViewpointSet& set);
  /// K = 1, 2, V+1 (one branch per S-view pair, D-view merged),
  /// V + V(V-1)/2 (unordered pairs) or V*V (ordered pairs).
  static BranchLayout granular(const ViewpointSet& set, int n_branches);
  /// Inverse of describe().
  static BranchLayout parse(std::string_view text, const ViewpointSet& set);

  int n_branches() const { return n_branches_; }
  const ViewpointSet& viewpoints() const { return set_; }
  int branch_of(Viewpoint anchor, Viewpoint other) const;
  BranchKind kind(int branch) const;

  /// Branches separated by ';', owned pairs by ','. Two-space layout for two
  /// viewpoints reads "front-front,rear-rear;front-rear,rear-front".
  std::string describe() const;
  /// One letter per branch: S, D or M (mixed).
  std::string kinds() const;

  friend bool operator==(const BranchLayout&, const BranchLayout&) = default;

 private:
  BranchLayout(ViewpointSet set, int n_branches, std::vector<int> table);
  void validate() const;

  ViewpointSet set_;
  int n_branches_ = 0;
  std::vector<int> table_;  // row-major V x V
};

}  // namespace viewmetric
