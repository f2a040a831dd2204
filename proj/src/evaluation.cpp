#include "viewmetric/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <random>

#include "viewmetric/viewpoint_loss.hpp"

namespace viewmetric {

namespace {

bool ranks_before(const Matrix& distances, int query, int a, int b) {
  const double da = distances(query, a);
  const double db = distances(query, b);
  return da < db || (da == db && a < b);
}

/// True match is ranked first among the gallery entries accepted by `keep`.
template <typename Keep>
bool top1_hit(const Matrix& distances, int query, int match, std::span<const int> gallery, Keep keep) {
  for (int g : gallery) {
    if (g == match || !keep(g)) continue;
    if (ranks_before(distances, query, g, match)) return false;
  }
  return true;
}

int true_match(std::span<const int> ids, int query, std::span<const int> gallery) {
  for (int g : gallery) {
    if (ids[static_cast<std::size_t>(g)] == ids[static_cast<std::size_t>(query)]) return g;
  }
  throw ConfigError("evaluation: query " + std::to_string(query) + " has no true match in the gallery");
}

std::optional<double> rate(int hits, int total) {
  if (total == 0) return std::nullopt;
  return static_cast<double>(hits) / static_cast<double>(total);
}

std::string optional_field(const std::optional<double>& v) { return v ? format_real(*v) : std::string(); }

}  // namespace

BranchEmbeddings embed_all(const EmbeddingModel& model, const Dataset& ds) {
  if (model.config.d_x != ds.d_x) {
    throw ConfigError("embed_all: model expects d_x=" + std::to_string(model.config.d_x) + ", dataset has d_x=" +
                      std::to_string(ds.d_x));
  }
  return forward(model, ds.features()).outputs;
}

double conditional_distance(int i, int j, std::span<const Viewpoint> predicted, const Matrix& s_space,
                            const Matrix& d_space) {
  const auto n = static_cast<int>(predicted.size());
  if (i < 0 || j < 0 || i >= n || j >= n || s_space.rows() != n || d_space.rows() != n) {
    throw std::out_of_range("conditional_distance: index out of range");
  }
  if (i == j) return 0.0;
  const bool same = pair_relation(predicted[static_cast<std::size_t>(i)], predicted[static_cast<std::size_t>(j)]) ==
                    Relation::s_view;
  const Matrix& space = same ? s_space : d_space;
  return (space.row(i) - space.row(j)).norm();
}

Matrix conditional_distance_matrix(const BranchEmbeddings& emb, std::span<const Viewpoint> predicted,
                                   const BranchLayout& layout) {
  if (emb.n_branches() != layout.n_branches()) {
    throw ConfigError("conditional distances: branch count does not match the layout");
  }
  const auto n = static_cast<Eigen::Index>(predicted.size());
  if (emb.rows() != n) throw ConfigError("conditional distances: predictions not aligned with embeddings");
  std::vector<Matrix> per_branch;
  for (const auto& e : emb.embeddings) per_branch.push_back(pairwise_distances(e));
  Matrix out(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const int k = layout.branch_of(predicted[static_cast<std::size_t>(i)], predicted[static_cast<std::size_t>(j)]);
      out(i, j) = per_branch[static_cast<std::size_t>(k)](i, j);
    }
  }
  return out;
}

std::vector<GallerySplit> make_splits(std::span<const int> ids, int n_trials, std::uint64_t seed) {
  if (n_trials < 1) throw ConfigError("invalid trials: must be >= 1");
  std::map<int, std::vector<int>> by_id;
  for (std::size_t i = 0; i < ids.size(); ++i) by_id[ids[i]].push_back(static_cast<int>(i));
  for (const auto& [id, members] : by_id) {
    if (members.size() < 2) {
      throw ConfigError("make_splits: id " + std::to_string(id) + " has a single sample");
    }
  }
  std::vector<GallerySplit> splits;
  for (int t = 0; t < n_trials; ++t) {
    GallerySplit split;
    split.seed = mix_hash(seed, static_cast<std::uint64_t>(t));
    std::mt19937_64 rng(split.seed);
    std::vector<bool> in_gallery(ids.size(), false);
    for (const auto& [id, members] : by_id) {
      std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
      in_gallery[static_cast<std::size_t>(members[pick(rng)])] = true;
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
      (in_gallery[i] ? split.gallery : split.query).push_back(static_cast<int>(i));
    }
    splits.push_back(std::move(split));
  }
  return splits;
}

std::vector<int> rank_gallery(const Matrix& distances, int query, std::span<const int> gallery) {
  std::vector<int> order(gallery.begin(), gallery.end());
  std::sort(order.begin(), order.end(),
            [&distances, query](int a, int b) { return ranks_before(distances, query, a, b); });
  return order;
}

std::vector<double> cmc(const Matrix& distances, std::span<const int> ids, const GallerySplit& split,
                        std::span<const int> ranks) {
  std::vector<long long> hits(ranks.size(), 0);
  for (int q : split.query) {
    const auto order = rank_gallery(distances, q, split.gallery);
    const auto it = std::find_if(order.begin(), order.end(), [&](int g) {
      return ids[static_cast<std::size_t>(g)] == ids[static_cast<std::size_t>(q)];
    });
    if (it == order.end()) {
      throw ConfigError("cmc: query " + std::to_string(q) + " has no true match in the gallery");
    }
    const auto position = static_cast<int>(it - order.begin()) + 1;
    for (std::size_t r = 0; r < ranks.size(); ++r) {
      if (position <= ranks[r]) ++hits[r];
    }
  }
  std::vector<double> out;
  const auto n = static_cast<double>(split.query.size());
  for (long long h : hits) out.push_back(split.query.empty() ? 0.0 : static_cast<double>(h) / n);
  return out;
}

double mean_average_precision(const Matrix& distances, const Mask& relevance) {
  if (distances.rows() != relevance.rows() || distances.cols() != relevance.cols()) {
    throw ConfigError("mean_average_precision: relevance shape mismatch");
  }
  if (distances.rows() == 0) throw ConfigError("mean_average_precision: no queries");
  std::vector<int> columns(static_cast<std::size_t>(distances.cols()));
  std::iota(columns.begin(), columns.end(), 0);
  double total = 0.0;
  for (Eigen::Index q = 0; q < distances.rows(); ++q) {
    const auto order = rank_gallery(distances, static_cast<int>(q), columns);
    int found = 0;
    double precision_sum = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      if (relevance(q, order[k])) {
        ++found;
        precision_sum += static_cast<double>(found) / static_cast<double>(k + 1);
      }
    }
    if (found == 0) {
      throw ConfigError("mean_average_precision: query " + std::to_string(q) + " has no relevant item");
    }
    total += precision_sum / found;
  }
  return total / static_cast<double>(distances.rows());
}

ViewpointMetrics viewpoint_protocol(const Matrix& distances, std::span<const int> ids, const GallerySplit& split,
                                    std::span<const Viewpoint> true_viewpoints) {
  int s_hit = 0, d_hit = 0, s_star = 0, d_star = 0;
  ViewpointMetrics out;
  for (int q : split.query) {
    const int match = true_match(ids, q, split.gallery);
    const Viewpoint vq = true_viewpoints[static_cast<std::size_t>(q)];
    const Relation rel = pair_relation(vq, true_viewpoints[static_cast<std::size_t>(match)]);
    const bool hit = top1_hit(distances, q, match, split.gallery, [](int) { return true; });
    const bool star = top1_hit(distances, q, match, split.gallery, [&](int g) {
      return pair_relation(vq, true_viewpoints[static_cast<std::size_t>(g)]) == rel;
    });
    if (rel == Relation::s_view) {
      ++out.s_queries;
      s_hit += hit ? 1 : 0;
      s_star += star ? 1 : 0;
    } else {
      ++out.d_queries;
      d_hit += hit ? 1 : 0;
      d_star += star ? 1 : 0;
    }
  }
  out.top1_s = rate(s_hit, out.s_queries);
  out.top1_d = rate(d_hit, out.d_queries);
  out.top1_s_star = rate(s_star, out.s_queries);
  out.top1_d_star = rate(d_star, out.d_queries);
  return out;
}

EvalReport evaluate(const Matrix& distances, std::span<const int> ids, std::span<const Viewpoint> true_viewpoints,
                    const std::vector<GallerySplit>& splits) {
  if (splits.empty()) throw ConfigError("evaluate: no gallery splits");
  static constexpr int kRanks[] = {1, 5, 20};
  EvalReport report;
  for (const auto& split : splits) {
    TrialResult trial;
    const auto acc = cmc(distances, ids, split, kRanks);
    trial.top1 = acc[0];
    trial.top5 = acc[1];
    trial.top20 = acc[2];

    Matrix qg(static_cast<Eigen::Index>(split.query.size()), static_cast<Eigen::Index>(split.gallery.size()));
    Mask relevant(qg.rows(), qg.cols());
    for (std::size_t r = 0; r < split.query.size(); ++r) {
      for (std::size_t c = 0; c < split.gallery.size(); ++c) {
        const auto ri = static_cast<Eigen::Index>(r);
        const auto ci = static_cast<Eigen::Index>(c);
        qg(ri, ci) = distances(split.query[r], split.gallery[c]);
        relevant(ri, ci) = ids[static_cast<std::size_t>(split.query[r])] == ids[static_cast<std::size_t>(split.gallery[c])];
      }
    }
    trial.map = mean_average_precision(qg, relevant);
    trial.viewpoint = viewpoint_protocol(distances, ids, split, true_viewpoints);
    report.trials.push_back(trial);
  }

  auto mean_of = [&report](auto getter) {
    double sum = 0.0;
    int count = 0;
    for (const auto& t : report.trials) {
      const std::optional<double> v = getter(t);
      if (v) {
        sum += *v;
        ++count;
      }
    }
    return count > 0 ? std::optional<double>(sum / count) : std::nullopt;
  };
  auto& agg = report.aggregate;
  agg.top1 = *mean_of([](const TrialResult& t) { return std::optional<double>(t.top1); });
  agg.top5 = *mean_of([](const TrialResult& t) { return std::optional<double>(t.top5); });
  agg.top20 = *mean_of([](const TrialResult& t) { return std::optional<double>(t.top20); });
  agg.map = *mean_of([](const TrialResult& t) { return std::optional<double>(t.map); });
  agg.viewpoint.top1_s = mean_of([](const TrialResult& t) { return t.viewpoint.top1_s; });
  agg.viewpoint.top1_d = mean_of([](const TrialResult& t) { return t.viewpoint.top1_d; });
  agg.viewpoint.top1_s_star = mean_of([](const TrialResult& t) { return t.viewpoint.top1_s_star; });
  agg.viewpoint.top1_d_star = mean_of([](const TrialResult& t) { return t.viewpoint.top1_d_star; });
  for (const auto& t : report.trials) {
    agg.viewpoint.s_queries += t.viewpoint.s_queries;
    agg.viewpoint.d_queries += t.viewpoint.d_queries;
  }
  return report;
}

double overlap_coefficient(std::span<const long long> p, std::span<const long long> q) {
  if (p.size() != q.size()) throw ConfigError("overlap_coefficient: histogram sizes differ");
  const double p_total = static_cast<double>(std::accumulate(p.begin(), p.end(), 0LL));
  const double q_total = static_cast<double>(std::accumulate(q.begin(), q.end(), 0LL));
  if (p_total == 0.0 || q_total == 0.0) throw ConfigError("overlap_coefficient: empty histogram");
  double overlap = 0.0;
  for (std::size_t b = 0; b < p.size(); ++b) {
    overlap += std::min(static_cast<double>(p[b]) / p_total, static_cast<double>(q[b]) / q_total);
  }
  return std::min(overlap, 1.0);
}

HistogramSet distance_histograms(const Matrix& distances, std::span<const int> ids,
                                 std::span<const Viewpoint> true_viewpoints, int n_bins) {
  if (n_bins < 1) throw ConfigError("invalid n_bins: must be >= 1");
  const auto n = static_cast<Eigen::Index>(ids.size());
  if (distances.rows() != n || true_viewpoints.size() != ids.size()) {
    throw ConfigError("distance_histograms: inputs not aligned");
  }
  struct Pair {
    double distance;
    int cls;
  };
  std::vector<Pair> pairs;
  double max_distance = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const auto ii = static_cast<std::size_t>(i);
      const auto jj = static_cast<std::size_t>(j);
      const bool same_id = ids[ii] == ids[jj];
      const bool same_view = true_viewpoints[ii] == true_viewpoints[jj];
      const int cls = same_view ? (same_id ? kSViewPos : kSViewNeg) : (same_id ? kDViewPos : kDViewNeg);
      pairs.push_back({distances(i, j), cls});
      max_distance = std::max(max_distance, distances(i, j));
    }
  }

  HistogramSet hist;
  hist.edges.resize(static_cast<std::size_t>(n_bins) + 1);
  for (int b = 0; b <= n_bins; ++b) {
    hist.edges[static_cast<std::size_t>(b)] = max_distance * static_cast<double>(b) / static_cast<double>(n_bins);
  }
  for (auto& c : hist.counts) c.assign(static_cast<std::size_t>(n_bins), 0);
  for (const auto& p : pairs) {
    int bin = max_distance > 0.0 ? static_cast<int>(p.distance / max_distance * n_bins) : 0;
    bin = std::clamp(bin, 0, n_bins - 1);
    ++hist.counts[static_cast<std::size_t>(p.cls)][static_cast<std::size_t>(bin)];
  }

  static constexpr const char* kNames[] = {"S-view pos", "S-view neg", "D-view pos", "D-view neg"};
  for (int c = 0; c < 4; ++c) {
    const auto& counts = hist.counts[static_cast<std::size_t>(c)];
    if (std::accumulate(counts.begin(), counts.end(), 0LL) == 0) {
      throw ConfigError(std::string("distance_histograms: pair class '") + kNames[c] + "' is empty");
    }
  }
  hist.overlap = overlap_coefficient(hist.counts[kDViewPos], hist.counts[kSViewNeg]);
  return hist;
}

void write_eval_csv(std::ostream& out, const EvalReport& report) {
  out << "trial,top1,top5,top20,mAP,top1_s,top1_d,top1_s_star,top1_d_star\n";
  auto row = [&out](const std::string& label, const TrialResult& t) {
    out << label << ',' << format_real(t.top1) << ',' << format_real(t.top5) << ',' << format_real(t.top20) << ','
        << format_real(t.map) << ',' << optional_field(t.viewpoint.top1_s) << ','
        << optional_field(t.viewpoint.top1_d) << ',' << optional_field(t.viewpoint.top1_s_star) << ','
        << optional_field(t.viewpoint.top1_d_star) << '\n';
  };
  for (std::size_t i = 0; i < report.trials.size(); ++i) row(std::to_string(i), report.trials[i]);
  row("mean", report.aggregate);
}

void write_histogram_csv(std::ostream& out, const HistogramSet& hist) {
  out << "# overlap(d_pos,s_neg)=" << format_real(hist.overlap) << '\n';
  out << "bin_lo,bin_hi,s_pos,s_neg,d_pos,d_neg\n";
  for (std::size_t b = 0; b + 1 < hist.edges.size(); ++b) {
    out << format_real(hist.edges[b]) << ',' << format_real(hist.edges[b + 1]) << ','
        << hist.counts[kSViewPos][b] << ',' << hist.counts[kSViewNeg][b] << ',' << hist.counts[kDViewPos][b] << ','
        << hist.counts[kDViewNeg][b] << '\n';
  }
}

void write_histogram_svg(std::ostream& out, const HistogramSet& hist, const std::string& title) {
  constexpr double kWidth = 640.0;
  constexpr double kHeight = 360.0;
  constexpr double kPad = 40.0;
  static constexpr const char* kColors[] = {"#2ca02c", "#d62728", "#1f77b4", "#ff7f0e"};
  static constexpr const char* kNames[] = {"S-view pos", "S-view neg", "D-view pos", "D-view neg"};
  const std::size_t bins = hist.edges.size() - 1;

  std::array<std::vector<double>, 4> density;
  double peak = 0.0;
  for (std::size_t c = 0; c < 4; ++c) {
    const double total = static_cast<double>(std::accumulate(hist.counts[c].begin(), hist.counts[c].end(), 0LL));
    for (long long v : hist.counts[c]) {
      density[c].push_back(total > 0.0 ? static_cast<double>(v) / total : 0.0);
      peak = std::max(peak, density[c].back());
    }
  }
  if (peak <= 0.0) peak = 1.0;

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kPad << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << title
      << " (overlap " << format_real(std::round(hist.overlap * 1e4) / 1e4) << ")</text>\n";
  out << "<line x1=\"" << kPad << "\" y1=\"" << kHeight - kPad << "\" x2=\"" << kWidth - kPad << "\" y2=\""
      << kHeight - kPad << "\" stroke=\"black\"/>\n";
  for (std::size_t c = 0; c < 4; ++c) {
    out << "<polyline fill=\"none\" stroke=\"" << kColors[c] << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t b = 0; b < bins; ++b) {
      const double x = kPad + (kWidth - 2 * kPad) * (static_cast<double>(b) + 0.5) / static_cast<double>(bins);
      const double y = kHeight - kPad - (kHeight - 2 * kPad) * density[c][b] / peak;
      out << (b > 0 ? " " : "") << format_real(std::round(x * 100) / 100) << ','
          << format_real(std::round(y * 100) / 100);
    }
    out << "\"/>\n";
    out << "<text x=\"" << kWidth - kPad - 110 << "\" y=\"" << 50 + 16 * static_cast<double>(c)
        << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" << kColors[c] << "\">" << kNames[c]
        << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace viewmetric
