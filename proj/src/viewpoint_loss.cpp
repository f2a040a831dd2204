#include "viewmetric/viewpoint_loss.hpp"

#include <cmath>
#include <ostream>

namespace viewmetric {

namespace {

void check_square(const Matrix& m, Eigen::Index n, const char* what) {
  if (m.rows() != n || m.cols() != n) {
    throw ConfigError(std::string(what) + ": expected a " + std::to_string(n) + "x" + std::to_string(n) +
                      " matrix");
  }
}

TripletSelection empty_selection(LossTerm term, Eigen::Index n) {
  TripletSelection sel;
  sel.term = term;
  sel.positive.assign(static_cast<std::size_t>(n), -1);
  sel.negative.assign(static_cast<std::size_t>(n), -1);
  sel.valid.assign(static_cast<std::size_t>(n), false);
  sel.hinge.assign(static_cast<std::size_t>(n), 0.0);
  return sel;
}

/// Shared mining loop; the two spaces coincide for within-space losses.
TripletLoss mine(const Matrix& positive_space, const Matrix& negative_space, const Mask& positive_cells,
                 const Mask& negative_cells, const Mask& id_equal, double alpha, LossTerm term) {
  const Eigen::Index n = id_equal.rows();
  check_square(positive_space, n, "mining");
  check_square(negative_space, n, "mining");
  if (positive_cells.rows() != n || negative_cells.rows() != n || positive_cells.cols() != n ||
      negative_cells.cols() != n) {
    throw ConfigError("mining: mask shape mismatch");
  }
  if (!(alpha > 0.0)) {
    throw ConfigError("mining: margin alpha must be positive");
  }

  TripletLoss out;
  out.selection = empty_selection(term, n);
  auto& sel = out.selection;
  double sum = 0.0;
  int valid = 0;
  for (Eigen::Index a = 0; a < n; ++a) {
    int pos = -1;
    int neg = -1;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != a && id_equal(a, j) && positive_cells(a, j)) {
        if (pos < 0 || positive_space(a, j) > positive_space(a, pos)) pos = static_cast<int>(j);
      }
      if (!id_equal(a, j) && negative_cells(a, j)) {
        if (neg < 0 || negative_space(a, j) < negative_space(a, neg)) neg = static_cast<int>(j);
      }
    }
    const auto ai = static_cast<std::size_t>(a);
    sel.positive[ai] = pos;
    sel.negative[ai] = neg;
    if (pos < 0 || neg < 0) continue;
    sel.valid[ai] = true;
    const double margin = positive_space(a, pos) - negative_space(a, neg) + alpha;
    sel.hinge[ai] = margin > 0.0 ? margin : 0.0;
    sum += sel.hinge[ai];
    ++valid;
  }
  out.loss = valid > 0 ? sum / valid : 0.0;
  return out;
}

/// Adds d(loss)/d(distance) contributions of one mined term to per-branch cell gradients.
void scatter_hinge_grad(const TripletSelection& sel, const Eigen::ArrayXXi& positive_owner,
                        const Eigen::ArrayXXi& negative_owner, std::vector<Matrix>& cell_grad) {
  const int valid = sel.valid_count();
  if (valid == 0) return;
  const double coeff = 1.0 / valid;
  for (std::size_t a = 0; a < sel.valid.size(); ++a) {
    if (!sel.valid[a] || !(sel.hinge[a] > 0.0)) continue;
    const auto ai = static_cast<Eigen::Index>(a);
    const Eigen::Index p = sel.positive[a];
    const Eigen::Index q = sel.negative[a];
    cell_grad[static_cast<std::size_t>(positive_owner(ai, p))](ai, p) += coeff;
    cell_grad[static_cast<std::size_t>(negative_owner(ai, q))](ai, q) -= coeff;
  }
}

}  // namespace

int TripletSelection::valid_count() const {
  int count = 0;
  for (bool v : valid) count += v ? 1 : 0;
  return count;
}

Matrix pairwise_distances(const Matrix& embeddings) {
  if (!embeddings.allFinite()) {
    throw NumericalError("pairwise_distances: non-finite embedding");
  }
  const Eigen::Index n = embeddings.rows();
  Matrix d = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double dist = (embeddings.row(i) - embeddings.row(j)).norm();
      d(i, j) = dist;
      d(j, i) = dist;
    }
  }
  return d;
}

std::pair<Mask, Mask> relation_masks(std::span<const Viewpoint> predicted) {
  const auto n = static_cast<Eigen::Index>(predicted.size());
  Mask s_mask(n, n);
  Mask d_mask(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const bool same = pair_relation(predicted[static_cast<std::size_t>(i)],
                                      predicted[static_cast<std::size_t>(j)]) == Relation::s_view;
      s_mask(i, j) = same;
      d_mask(i, j) = !same;
    }
  }
  return {std::move(s_mask), std::move(d_mask)};
}

Mask identity_mask(std::span<const int> ids) {
  const auto n = static_cast<Eigen::Index>(ids.size());
  Mask eq(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      eq(i, j) = ids[static_cast<std::size_t>(i)] == ids[static_cast<std::size_t>(j)];
    }
  }
  return eq;
}

Matrix DistanceMatrices::integrated() const {
  const Eigen::Index n = size();
  Matrix out(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) out(i, j) = per_branch[static_cast<std::size_t>(owner(i, j))](i, j);
  }
  return out;
}

Mask DistanceMatrices::branch_mask(int branch) const {
  Mask m = owner == branch;
  for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, i) = false;
  return m;
}

DistanceMatrices build_distance_matrices(const BranchEmbeddings& emb, std::span<const Viewpoint> predicted,
                                         std::span<const int> ids, const BranchLayout& layout) {
  if (emb.n_branches() != layout.n_branches()) {
    throw ConfigError("distance matrices: model has " + std::to_string(emb.n_branches()) +
                      " branches, layout declares " + std::to_string(layout.n_branches()));
  }
  const Eigen::Index n = emb.rows();
  if (static_cast<Eigen::Index>(predicted.size()) != n || static_cast<Eigen::Index>(ids.size()) != n) {
    throw ConfigError("distance matrices: predictions/ids not aligned with the batch");
  }
  DistanceMatrices dm;
  for (const auto& e : emb.embeddings) dm.per_branch.push_back(pairwise_distances(e));
  dm.owner.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      dm.owner(i, j) = layout.branch_of(predicted[static_cast<std::size_t>(i)], predicted[static_cast<std::size_t>(j)]);
    }
  }
  std::tie(dm.s_mask, dm.d_mask) = relation_masks(predicted);
  dm.id_equal = identity_mask(ids);
  return dm;
}

TripletLoss within_space_loss(const Matrix& distances, const Mask& mask, const Mask& id_equal, double alpha) {
  return mine(distances, distances, mask, mask, id_equal, alpha, LossTerm::triplet);
}

TripletLoss cross_space_loss(const Matrix& positive_space, const Matrix& negative_space, const Mask& d_mask,
                             const Mask& s_mask, const Mask& id_equal, double alpha) {
  return mine(positive_space, negative_space, d_mask, s_mask, id_equal, alpha, LossTerm::cross);
}

CrossEntropyResult id_cross_entropy(const std::vector<Matrix>& logits, std::span<const int> ids) {
  CrossEntropyResult out;
  if (logits.empty()) return out;
  const auto n = static_cast<Eigen::Index>(ids.size());
  const double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(logits.size()));
  double total = 0.0;
  for (const auto& z : logits) {
    if (z.rows() != n) throw ConfigError("id_cross_entropy: logits not aligned with ids");
    Matrix grad(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      const int y = ids[static_cast<std::size_t>(i)];
      if (y < 0 || y >= z.cols()) {
        throw ConfigError("id_cross_entropy: id " + std::to_string(y) + " outside [0, " +
                          std::to_string(z.cols()) + ")");
      }
      const double top = z.row(i).maxCoeff();
      const Eigen::RowVectorXd shifted = (z.row(i).array() - top).exp().matrix();
      const double partition = shifted.sum();
      total += std::log(partition) + top - z(i, y);
      grad.row(i) = shifted / partition;
      grad(i, y) -= 1.0;
    }
    out.grad_logits.push_back(grad * scale);
  }
  out.loss = total * scale;
  return out;
}

void LossConfig::validate() const {
  if (!(alpha > 0.0)) throw ConfigError("invalid alpha: margin must be positive");
  if (!(lambda_ce >= 0.0)) throw ConfigError("invalid lambda_ce: must be >= 0");
  if (!use_within && !use_cross) throw ConfigError("invalid loss variant: enable within-space or cross-space terms");
}

LossReport triplet_terms(const DistanceMatrices& dm, const LossConfig& cfg) {
  cfg.validate();
  LossReport report;
  auto& v = report.values;
  if (cfg.use_within) {
    for (int k = 0; k < cfg.layout.n_branches(); ++k) {
      TripletLoss term = within_space_loss(dm.per_branch[static_cast<std::size_t>(k)], dm.branch_mask(k), dm.id_equal,
                                           cfg.alpha);
      const BranchKind kind = cfg.layout.kind(k);
      term.selection.term = kind == BranchKind::d_view   ? LossTerm::d_view
                            : kind == BranchKind::s_view ? LossTerm::s_view
                                                         : LossTerm::triplet;
      if (kind == BranchKind::d_view) {
        v.l_d += term.loss;
        v.valid_d += term.selection.valid_count();
      } else {
        v.l_s += term.loss;
        v.valid_s += term.selection.valid_count();
      }
      report.within_per_branch.push_back(term.loss);
      report.within.push_back(std::move(term.selection));
    }
  }
  if (cfg.use_cross) {
    const Matrix merged = dm.integrated();
    TripletLoss term = cross_space_loss(merged, merged, dm.d_mask, dm.s_mask, dm.id_equal, cfg.alpha);
    v.l_cross = term.loss;
    v.valid_cross = term.selection.valid_count();
    report.cross = std::move(term.selection);
  }
  v.l_total = v.l_s + v.l_d + v.l_cross;
  return report;
}

TotalLoss total_loss(const BranchEmbeddings& emb, std::span<const Viewpoint> predicted, std::span<const int> ids,
                     const LossConfig& cfg) {
  const DistanceMatrices dm = build_distance_matrices(emb, predicted, ids, cfg.layout);
  TotalLoss out;
  out.report = triplet_terms(dm, cfg);

  const Eigen::Index n = dm.size();
  const auto branches = static_cast<std::size_t>(cfg.layout.n_branches());
  std::vector<Matrix> cell_grad(branches, Matrix::Zero(n, n));
  for (std::size_t k = 0; k < out.report.within.size(); ++k) {
    const Eigen::ArrayXXi own = Eigen::ArrayXXi::Constant(n, n, static_cast<int>(k));
    scatter_hinge_grad(out.report.within[k], own, own, cell_grad);
  }
  if (out.report.cross) {
    scatter_hinge_grad(*out.report.cross, dm.owner, dm.owner, cell_grad);
  }

  // dD_ij/de_i = (e_i - e_j) / D_ij, zero for coincident rows.
  for (std::size_t k = 0; k < branches; ++k) {
    const Matrix& e = emb.embeddings[k];
    const Matrix& d = dm.per_branch[k];
    Matrix g = Matrix::Zero(e.rows(), e.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        const double c = cell_grad[k](i, j);
        if (c == 0.0 || d(i, j) == 0.0) continue;
        const Eigen::RowVectorXd unit = (e.row(i) - e.row(j)) / (d(i, j) + kDistanceGradGuard);
        g.row(i) += c * unit;
        g.row(j) -= c * unit;
      }
    }
    out.grad_embeddings.push_back(std::move(g));
  }

  if (!emb.logits.empty() && cfg.lambda_ce > 0.0) {
    CrossEntropyResult ce = id_cross_entropy(emb.logits, ids);
    out.report.values.l_ce = ce.loss;
    out.report.values.l_total += cfg.lambda_ce * ce.loss;
    for (auto& g : ce.grad_logits) out.grad_logits.push_back(g * cfg.lambda_ce);
  } else if (!emb.logits.empty()) {
    for (const auto& z : emb.logits) out.grad_logits.push_back(Matrix::Zero(z.rows(), z.cols()));
  }
  return out;
}

std::uint64_t selection_signature(const LossReport& report) {
  std::uint64_t h = 0xc0ffee;
  auto fold = [&h](const TripletSelection& sel) {
    for (std::size_t a = 0; a < sel.valid.size(); ++a) {
      h = mix_hash(h, static_cast<std::uint64_t>(sel.positive[a] + 1));
      h = mix_hash(h, static_cast<std::uint64_t>(sel.negative[a] + 1));
      h = mix_hash(h, sel.hinge[a] > 0.0 ? 1U : 0U);
    }
  };
  for (const auto& sel : report.within) fold(sel);
  if (report.cross) fold(*report.cross);
  return h;
}

void write_loss_csv_header(std::ostream& out) {
  out << "step,L_s,L_d,L_cross,L_ce,L_total,valid_s,valid_d,valid_cross\n";
}

void write_loss_csv_row(std::ostream& out, long long step, const LossValues& v) {
  out << step << ',' << format_real(v.l_s) << ',' << format_real(v.l_d) << ',' << format_real(v.l_cross) << ','
      << format_real(v.l_ce) << ',' << format_real(v.l_total) << ',' << v.valid_s << ',' << v.valid_d << ','
      << v.valid_cross << '\n';
}

}  // namespace viewmetric
