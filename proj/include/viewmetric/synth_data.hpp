#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "viewmetric/common.hpp"

namespace viewmetric {

/// Observation viewpoint. The numeric value is the index inside a ViewpointSet,
/// so the first two entries are shared by the 2- and 3-viewpoint sets.
enum class Viewpoint : std::uint8_t { front = 0, rear = 1, side = 2 };

std::string_view viewpoint_name(Viewpoint v);
Viewpoint parse_viewpoint(std::string_view name);

/// The V viewpoints declared by a dataset, V in {2, 3}.
class ViewpointSet {
 public:
  ViewpointSet() = default;
  explicit ViewpointSet(int count);

  int size() const { return count_; }
  bool contains(Viewpoint v) const { return static_cast<int>(v) < count_; }
  Viewpoint at(int index) const;
  std::vector<Viewpoint> labels() const;
  /// Comma-separated names, e.g. "front,rear".
  std::string to_string() const;
  static ViewpointSet parse(std::string_view comma_list);

  friend bool operator==(const ViewpointSet&, const ViewpointSet&) = default;

 private:
  int count_ = 2;
};

struct Sample {
  int id = 0;
  Viewpoint viewpoint = Viewpoint::front;
  std::vector<double> x;
};

struct Dataset {
  std::vector<Sample> samples;
  int d_x = 0;
  ViewpointSet viewpoints;
  std::uint64_t seed = 0;
  /// original_ids[i] is the identity that re-indexed id i had before splitting.
  std::vector<int> original_ids;

  std::size_t size() const { return samples.size(); }
  int n_ids() const { return static_cast<int>(original_ids.size()); }

  /// Stacks the features of the listed samples row by row.
  Matrix features(const std::vector<int>& indices) const;
  Matrix features() const;
  std::vector<int> ids() const;
  std::vector<Viewpoint> true_viewpoints() const;

  /// Throws ConfigError if any Dataset invariant is violated.
  void validate() const;
};

struct GenConfig {
  int n_ids = 80;
  int imgs_per_id = 4;
  int d_z = 8;
  int d_x = 32;
  int n_viewpoints = 2;
  double viewpoint_gap = 6.0;
  double within_view_noise = 0.3;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Test hook: replaces every per-viewpoint map with the first one.
struct GenOverrides {
  bool share_view_maps = false;
};

/// Linear latent-factor generator: x = M_v z + b_v + noise, with a random map M_v
/// and an offset b_v of norm viewpoint_gap per viewpoint. Offsets are mutually
/// orthogonal. Each identity cycles through the viewpoints round-robin.
Dataset generate_dataset(const GenConfig& cfg, const GenOverrides& overrides = {});

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

/// Partitions identities (never samples) into disjoint train and test sets.
/// Both sides are re-indexed to 0..n-1 and keep their original id mapping.
DatasetSplit split_by_id(const Dataset& ds, double test_fraction, std::uint64_t seed);

struct ClassStats {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t count = 0;
};

/// Raw-feature Euclidean distance statistics per pair class, with classes
/// defined by identity agreement and ground-truth viewpoint relation.
struct PairClassStats {
  ClassStats s_view_pos;
  ClassStats s_view_neg;
  ClassStats d_view_pos;
  ClassStats d_view_neg;
};

PairClassStats raw_pair_stats(const Dataset& ds);

void write_dataset(std::ostream& out, const Dataset& ds);
Dataset read_dataset(std::istream& in);
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

}  // namespace viewmetric
