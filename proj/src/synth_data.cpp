#include "viewmetric/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace viewmetric {

namespace {

constexpr std::string_view kDatasetMagic = "#viewmetric-dataset";
constexpr std::string_view kDatasetVersion = "v1";

void require(bool condition, const std::string& field, const std::string& what) {
  if (!condition) {
    throw ConfigError("invalid " + field + ": " + what);
  }
}

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double sum = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double diff = a[k] - b[k];
    sum += diff * diff;
  }
  return std::sqrt(sum);
}

struct Accumulator {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t count = 0;

  void add(double value) {
    sum += value;
    sum_sq += value * value;
    ++count;
  }

  ClassStats finish(const char* name) const {
    if (count == 0) {
      throw ConfigError(std::string("pair class '") + name + "' is empty");
    }
    ClassStats stats;
    stats.count = count;
    stats.mean = sum / static_cast<double>(count);
    const double variance = std::max(0.0, sum_sq / static_cast<double>(count) - stats.mean * stats.mean);
    stats.stddev = std::sqrt(variance);
    return stats;
  }
};

}  // namespace

std::string_view viewpoint_name(Viewpoint v) {
  switch (v) {
    case Viewpoint::front:
      return "front";
    case Viewpoint::rear:
      return "rear";
    case Viewpoint::side:
      return "side";
  }
  return "unknown";
}

Viewpoint parse_viewpoint(std::string_view name) {
  name = trim(name);
  if (name == "front") return Viewpoint::front;
  if (name == "rear") return Viewpoint::rear;
  if (name == "side") return Viewpoint::side;
  throw ConfigError("unknown viewpoint '" + std::string(name) + "'");
}

ViewpointSet::ViewpointSet(int count) : count_(count) {
  if (count != 2 && count != 3) {
    throw ConfigError("invalid n_viewpoints: must be 2 or 3, got " + std::to_string(count));
  }
}

Viewpoint ViewpointSet::at(int index) const {
  if (index < 0 || index >= count_) {
    throw std::out_of_range("viewpoint index out of range");
  }
  return static_cast<Viewpoint>(index);
}

std::vector<Viewpoint> ViewpointSet::labels() const {
  std::vector<Viewpoint> out;
  for (int v = 0; v < count_; ++v) out.push_back(static_cast<Viewpoint>(v));
  return out;
}

std::string ViewpointSet::to_string() const {
  std::string out;
  for (int v = 0; v < count_; ++v) {
    if (v > 0) out += ',';
    out += viewpoint_name(static_cast<Viewpoint>(v));
  }
  return out;
}

ViewpointSet ViewpointSet::parse(std::string_view comma_list) {
  const auto names = split(comma_list, ',');
  ViewpointSet set(static_cast<int>(names.size()));
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (parse_viewpoint(names[i]) != static_cast<Viewpoint>(i)) {
      throw ConfigError("viewpoints must be declared in the order front,rear[,side]");
    }
  }
  return set;
}

Matrix Dataset::features(const std::vector<int>& indices) const {
  Matrix out(static_cast<Eigen::Index>(indices.size()), d_x);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& x = samples.at(static_cast<std::size_t>(indices[r])).x;
    for (int c = 0; c < d_x; ++c) out(static_cast<Eigen::Index>(r), c) = x[static_cast<std::size_t>(c)];
  }
  return out;
}

Matrix Dataset::features() const {
  std::vector<int> all(samples.size());
  std::iota(all.begin(), all.end(), 0);
  return features(all);
}

std::vector<int> Dataset::ids() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.id);
  return out;
}

std::vector<Viewpoint> Dataset::true_viewpoints() const {
  std::vector<Viewpoint> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.viewpoint);
  return out;
}

void Dataset::validate() const {
  require(d_x >= 1, "d_x", "must be positive");
  std::vector<int> per_id(original_ids.size(), 0);
  for (const auto& s : samples) {
    require(s.id >= 0 && s.id < n_ids(), "id", "ids must form a contiguous 0..n_ids-1 range");
    require(viewpoints.contains(s.viewpoint), "viewpoint", "sample viewpoint outside the declared set");
    require(static_cast<int>(s.x.size()) == d_x, "x", "feature length differs from d_x");
    for (double v : s.x) require(std::isfinite(v), "x", "features must be finite");
    ++per_id[static_cast<std::size_t>(s.id)];
  }
  for (int count : per_id) require(count >= 2, "id", "every id needs at least 2 samples");
}

void GenConfig::validate() const {
  require(n_ids >= 2, "n_ids", "must be >= 2");
  require(imgs_per_id >= 2, "imgs_per_id", "must be >= 2");
  require(d_z >= 1, "d_z", "must be >= 1");
  require(d_x >= 1, "d_x", "must be >= 1");
  require(d_z <= d_x, "d_z", "must not exceed d_x");
  require(n_viewpoints == 2 || n_viewpoints == 3, "n_viewpoints", "must be 2 or 3");
  require(n_viewpoints <= d_x, "n_viewpoints", "orthogonal offsets need d_x >= n_viewpoints");
  require(std::isfinite(viewpoint_gap) && viewpoint_gap >= 0.0, "viewpoint_gap", "must be >= 0");
  require(std::isfinite(within_view_noise) && within_view_noise >= 0.0, "within_view_noise", "must be >= 0");
}

Dataset generate_dataset(const GenConfig& cfg, const GenOverrides& overrides) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  const int views = cfg.n_viewpoints;
  const double map_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_z));

  std::vector<Matrix> maps;
  for (int v = 0; v < views; ++v) {
    Matrix m(cfg.d_x, cfg.d_z);
    for (int r = 0; r < cfg.d_x; ++r) {
      for (int c = 0; c < cfg.d_z; ++c) m(r, c) = normal(rng) * map_scale;
    }
    maps.push_back(std::move(m));
  }
  if (overrides.share_view_maps) {
    for (int v = 1; v < views; ++v) maps[static_cast<std::size_t>(v)] = maps[0];
  }

  // Gram-Schmidt over seeded random directions.
  std::vector<Vector> offsets;
  for (int v = 0; v < views; ++v) {
    Vector dir(cfg.d_x);
    for (int k = 0; k < cfg.d_x; ++k) dir(k) = normal(rng);
    for (const auto& prev : offsets) dir -= prev.dot(dir) * prev;
    dir /= dir.norm();
    offsets.push_back(dir);
  }
  for (auto& b : offsets) b *= cfg.viewpoint_gap;

  Dataset ds;
  ds.d_x = cfg.d_x;
  ds.viewpoints = ViewpointSet(views);
  ds.seed = cfg.seed;
  ds.original_ids.resize(static_cast<std::size_t>(cfg.n_ids));
  std::iota(ds.original_ids.begin(), ds.original_ids.end(), 0);
  ds.samples.reserve(static_cast<std::size_t>(cfg.n_ids * cfg.imgs_per_id));

  for (int id = 0; id < cfg.n_ids; ++id) {
    Vector z(cfg.d_z);
    for (int k = 0; k < cfg.d_z; ++k) z(k) = normal(rng);
    for (int img = 0; img < cfg.imgs_per_id; ++img) {
      const int v = img % views;
      const Vector clean = maps[static_cast<std::size_t>(v)] * z + offsets[static_cast<std::size_t>(v)];
      Sample s;
      s.id = id;
      s.viewpoint = static_cast<Viewpoint>(v);
      s.x.resize(static_cast<std::size_t>(cfg.d_x));
      for (int k = 0; k < cfg.d_x; ++k) {
        s.x[static_cast<std::size_t>(k)] = clean(k) + cfg.within_view_noise * normal(rng);
      }
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

DatasetSplit split_by_id(const Dataset& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("invalid test_fraction: must lie in (0, 1)");
  }
  const int n = ds.n_ids();
  const int n_test = static_cast<int>(std::lround(test_fraction * n));
  const int n_train = n - n_test;
  if (n_test < 2 || n_train < 2) {
    throw ConfigError("invalid test_fraction: split of " + std::to_string(n) + " ids leaves " +
                      std::to_string(n_train) + " train / " + std::to_string(n_test) +
                      " test ids, each side needs at least 2");
  }

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<int> test_ids(order.begin(), order.begin() + n_test);
  std::vector<int> train_ids(order.begin() + n_test, order.end());
  std::sort(test_ids.begin(), test_ids.end());
  std::sort(train_ids.begin(), train_ids.end());

  auto build = [&ds](const std::vector<int>& keep) {
    std::vector<int> remap(static_cast<std::size_t>(ds.n_ids()), -1);
    Dataset out;
    out.d_x = ds.d_x;
    out.viewpoints = ds.viewpoints;
    out.seed = ds.seed;
    for (std::size_t k = 0; k < keep.size(); ++k) {
      remap[static_cast<std::size_t>(keep[k])] = static_cast<int>(k);
      out.original_ids.push_back(ds.original_ids[static_cast<std::size_t>(keep[k])]);
    }
    for (const auto& s : ds.samples) {
      const int new_id = remap[static_cast<std::size_t>(s.id)];
      if (new_id < 0) continue;
      Sample copy = s;
      copy.id = new_id;
      out.samples.push_back(std::move(copy));
    }
    return out;
  };
  return {build(train_ids), build(test_ids)};
}

PairClassStats raw_pair_stats(const Dataset& ds) {
  Accumulator s_pos, s_neg, d_pos, d_neg;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    for (std::size_t j = i + 1; j < ds.samples.size(); ++j) {
      const auto& a = ds.samples[i];
      const auto& b = ds.samples[j];
      const double d = distance(a.x, b.x);
      const bool same_id = a.id == b.id;
      const bool same_view = a.viewpoint == b.viewpoint;
      if (same_view) {
        (same_id ? s_pos : s_neg).add(d);
      } else {
        (same_id ? d_pos : d_neg).add(d);
      }
    }
  }
  return {s_pos.finish("S-view pos"), s_neg.finish("S-view neg"), d_pos.finish("D-view pos"),
          d_neg.finish("D-view neg")};
}

void write_dataset(std::ostream& out, const Dataset& ds) {
  out << kDatasetMagic << ' ' << kDatasetVersion << " d_x=" << ds.d_x
      << " viewpoints=" << ds.viewpoints.to_string() << '\n';
  for (const auto& s : ds.samples) {
    out << s.id << ',' << viewpoint_name(s.viewpoint);
    for (double v : s.x) out << ',' << format_real(v);
    out << '\n';
  }
}

Dataset read_dataset(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) {
    throw ConfigError("dataset: missing header line");
  }
  std::istringstream hs(header);
  std::string magic, version, dx_field, vp_field;
  hs >> magic >> version >> dx_field >> vp_field;
  if (magic != kDatasetMagic) {
    throw ConfigError("dataset: not a viewmetric dataset file");
  }
  if (version != kDatasetVersion) {
    throw ConfigError("dataset: unsupported version '" + version + "'");
  }
  if (dx_field.rfind("d_x=", 0) != 0 || vp_field.rfind("viewpoints=", 0) != 0) {
    throw ConfigError("dataset: malformed header");
  }

  Dataset ds;
  ds.d_x = static_cast<int>(parse_integer(dx_field.substr(4)));
  ds.viewpoints = ViewpointSet::parse(vp_field.substr(11));

  std::string line;
  int line_no = 1;
  int max_id = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split(line, ',');
    if (static_cast<int>(fields.size()) != ds.d_x + 2) {
      throw ConfigError("dataset line " + std::to_string(line_no) + ": expected " +
                        std::to_string(ds.d_x + 2) + " fields");
    }
    Sample s;
    try {
      s.id = static_cast<int>(parse_integer(fields[0]));
      s.viewpoint = parse_viewpoint(fields[1]);
      s.x.reserve(static_cast<std::size_t>(ds.d_x));
      for (int k = 0; k < ds.d_x; ++k) s.x.push_back(parse_real(fields[static_cast<std::size_t>(k + 2)]));
    } catch (const ConfigError& e) {
      throw ConfigError("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
    if (s.id < 0) {
      throw ConfigError("dataset line " + std::to_string(line_no) + ": negative id");
    }
    max_id = std::max(max_id, s.id);
    ds.samples.push_back(std::move(s));
  }
  ds.original_ids.resize(static_cast<std::size_t>(max_id + 1));
  std::iota(ds.original_ids.begin(), ds.original_ids.end(), 0);
  ds.validate();
  return ds;
}

void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  write_dataset(out, ds);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open dataset '" + path + "'");
  return read_dataset(in);
}

}  // namespace viewmetric
