#include "viewmetric/branch_layout.hpp"

namespace viewmetric {

BranchLayout::BranchLayout(ViewpointSet set, int n_branches, std::vector<int> table)
    : set_(set), n_branches_(n_branches), table_(std::move(table)) {
  validate();
}

void BranchLayout::validate() const {
  const int views = set_.size();
  if (static_cast<int>(table_.size()) != views * views) {
    throw ConfigError("branch layout: table size does not match the viewpoint set");
  }
  std::vector<bool> used(static_cast<std::size_t>(n_branches_), false);
  for (int b : table_) {
    if (b < 0 || b >= n_branches_) throw ConfigError("branch layout: branch index out of range");
    used[static_cast<std::size_t>(b)] = true;
  }
  for (bool u : used) {
    if (!u) throw ConfigError("branch layout: every branch must own at least one viewpoint pair");
  }
}

BranchLayout BranchLayout::single(const ViewpointSet& set) {
  return BranchLayout(set, 1, std::vector<int>(static_cast<std::size_t>(set.size() * set.size()), 0));
}

BranchLayout BranchLayout::two_space(const ViewpointSet& set) {
  const int views = set.size();
  std::vector<int> table(static_cast<std::size_t>(views * views));
  for (int a = 0; a < views; ++a) {
    for (int b = 0; b < views; ++b) table[static_cast<std::size_t>(a * views + b)] = a == b ? 0 : 1;
  }
  return BranchLayout(set, 2, std::move(table));
}

BranchLayout BranchLayout::granular(const ViewpointSet& set, int n_branches) {
  const int views = set.size();
  if (n_branches == 1) return single(set);
  if (n_branches == 2) return two_space(set);

  std::vector<int> table(static_cast<std::size_t>(views * views), -1);
  for (int a = 0; a < views; ++a) table[static_cast<std::size_t>(a * views + a)] = a;

  if (n_branches == views + 1) {
    for (int a = 0; a < views; ++a) {
      for (int b = 0; b < views; ++b) {
        if (a != b) table[static_cast<std::size_t>(a * views + b)] = views;
      }
    }
  } else if (n_branches == views + views * (views - 1) / 2) {
    int next = views;
    for (int a = 0; a < views; ++a) {
      for (int b = a + 1; b < views; ++b) {
        table[static_cast<std::size_t>(a * views + b)] = next;
        table[static_cast<std::size_t>(b * views + a)] = next;
        ++next;
      }
    }
  } else if (n_branches == views * views) {
    int next = views;
    for (int a = 0; a < views; ++a) {
      for (int b = 0; b < views; ++b) {
        if (a != b) table[static_cast<std::size_t>(a * views + b)] = next++;
      }
    }
  } else {
    throw ConfigError("invalid n_branches: " + std::to_string(n_branches) + " has no viewpoint partition for " +
                      std::to_string(views) + " viewpoints");
  }
  return BranchLayout(set, n_branches, std::move(table));
}

BranchLayout BranchLayout::parse(std::string_view text, const ViewpointSet& set) {
  const int views = set.size();
  const auto branches = split(trim(text), ';');
  std::vector<int> table(static_cast<std::size_t>(views * views), -1);
  for (std::size_t k = 0; k < branches.size(); ++k) {
    for (const auto& pair : split(branches[k], ',')) {
      const auto ends = split(pair, '-');
      if (ends.size() != 2) throw ConfigError("branch layout: malformed pair '" + pair + "'");
      const auto a = parse_viewpoint(ends[0]);
      const auto b = parse_viewpoint(ends[1]);
      if (!set.contains(a) || !set.contains(b)) {
        throw ConfigError("branch layout: pair '" + pair + "' outside the viewpoint set");
      }
      auto& slot = table[static_cast<std::size_t>(static_cast<int>(a) * views + static_cast<int>(b))];
      if (slot != -1) throw ConfigError("branch layout: pair '" + pair + "' assigned twice");
      slot = static_cast<int>(k);
    }
  }
  for (int b : table) {
    if (b < 0) throw ConfigError("branch layout: some viewpoint pair has no branch");
  }
  return BranchLayout(set, static_cast<int>(branches.size()), std::move(table));
}

int BranchLayout::branch_of(Viewpoint anchor, Viewpoint other) const {
  const int views = set_.size();
  if (!set_.contains(anchor) || !set_.contains(other)) {
    throw ConfigError("branch layout: viewpoint outside the declared set");
  }
  return table_[static_cast<std::size_t>(static_cast<int>(anchor) * views + static_cast<int>(other))];
}

BranchKind BranchLayout::kind(int branch) const {
  const int views = set_.size();
  bool has_s = false;
  bool has_d = false;
  for (int a = 0; a < views; ++a) {
    for (int b = 0; b < views; ++b) {
      if (table_[static_cast<std::size_t>(a * views + b)] != branch) continue;
      (a == b ? has_s : has_d) = true;
    }
  }
  if (has_s && has_d) return BranchKind::mixed;
  return has_s ? BranchKind::s_view : BranchKind::d_view;
}

std::string BranchLayout::describe() const {
  const int views = set_.size();
  std::string out;
  for (int k = 0; k < n_branches_; ++k) {
    if (k > 0) out += ';';
    bool first = true;
    for (int a = 0; a < views; ++a) {
      for (int b = 0; b < views; ++b) {
        if (table_[static_cast<std::size_t>(a * views + b)] != k) continue;
        if (!first) out += ',';
        first = false;
        out += viewpoint_name(static_cast<Viewpoint>(a));
        out += '-';
        out += viewpoint_name(static_cast<Viewpoint>(b));
      }
    }
  }
  return out;
}

std::string BranchLayout::kinds() const {
  std::string out;
  for (int k = 0; k < n_branches_; ++k) {
    switch (kind(k)) {
      case BranchKind::s_view:
        out += 'S';
        break;
      case BranchKind::d_view:
        out += 'D';
        break;
      case BranchKind::mixed:
        out += 'M';
        break;
    }
  }
  return out;
}

}  // namespace viewmetric
