#include "dollocat/phylo_tree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace dollocat {

double Phylogeny::edge_length(int child) const {
  if (child == root_) return std::numeric_limits<double>::infinity();
  return nodes_[nodes_[child].parent].age - nodes_[child].age;
}

int Phylogeny::sibling(int i) const {
  int p = nodes_[i].parent;
  if (p < 0) throw std::logic_error("sibling: node has no parent");
  return nodes_[p].children[0] == i ? nodes_[p].children[1] : nodes_[p].children[0];
}

int Phylogeny::leaf_index(std::string_view label) const {
  for (int i = 0; i < num_leaves_; ++i)
    if (nodes_[i].label == label) return i;
  return -1;
}

std::vector<int> Phylogeny::postorder() const {
  std::vector<int> order;
  order.reserve(nodes_.size());
  std::vector<std::pair<int, bool>> stack{{root_, false}};
  while (!stack.empty()) {
    auto [node, expanded] = stack.back();
    stack.pop_back();
    if (expanded || nodes_[node].is_leaf()) {
      order.push_back(node);
      continue;
    }
    stack.emplace_back(node, true);
    stack.emplace_back(nodes_[node].children[1], false);
    stack.emplace_back(nodes_[node].children[0], false);
  }
  return order;
}

std::vector<int> Phylogeny::subtree_leaves(int i) const {
  std::vector<int> leaves;
  std::vector<int> stack{i};
  while (!stack.empty()) {
    int n = stack.back();
    stack.pop_back();
    if (nodes_[n].is_leaf()) {
      leaves.push_back(n);
    } else {
      stack.push_back(nodes_[n].children[0]);
      stack.push_back(nodes_[n].children[1]);
    }
  }
  std::sort(leaves.begin(), leaves.end());
  return leaves;
}

std::uint64_t Phylogeny::leaf_mask(int i) const {
  if (nodes_[i].is_leaf()) return 1ull << i;
  return leaf_mask(nodes_[i].children[0]) | leaf_mask(nodes_[i].children[1]);
}

int Phylogeny::mrca(std::span<const int> leaves) const {
  if (leaves.empty()) throw std::runtime_error("mrca: empty leaf set");
  // Walk up from the first leaf, marking the root path, then lift each other
  // leaf until it hits the marked path; the deepest hit is the answer.
  std::vector<int> depth(nodes_.size(), -1);
  int d = 0;
  for (int n = leaves[0]; n >= 0; n = nodes_[n].parent) depth[n] = d++;
  int best = leaves[0];
  for (std::size_t k = 1; k < leaves.size(); ++k) {
    int n = leaves[k];
    while (depth[n] < 0) n = nodes_[n].parent;
    if (depth[n] > depth[best]) best = n;
  }
  return best;
}

double Phylogeny::tree_length() const {
  double total = 0.0;
  for (int i = 0; i < num_nodes(); ++i)
    if (i != root_) total += edge_length(i);
  return total;
}

int Phylogeny::total_catastrophes() const {
  int total = 0;
  for (const auto& n : nodes_) total += n.n_cats;
  return total;
}

void Phylogeny::canonicalize() {
  const int n = num_nodes();
  std::vector<int> internal;
  for (int i = num_leaves_; i < n; ++i) internal.push_back(i);
  std::sort(internal.begin(), internal.end(),
            [&](int a, int b) { return nodes_[a].age < nodes_[b].age; });

  std::vector<int> new_index(n);
  for (int i = 0; i < num_leaves_; ++i) new_index[i] = i;
  for (std::size_t k = 0; k < internal.size(); ++k) new_index[internal[k]] = num_leaves_ + static_cast<int>(k);

  std::vector<PhyloNode> renumbered(n);
  for (int i = 0; i < n; ++i) {
    PhyloNode node = nodes_[i];
    if (node.parent >= 0) node.parent = new_index[node.parent];
    for (int& c : node.children)
      if (c >= 0) c = new_index[c];
    renumbered[new_index[i]] = std::move(node);
  }
  nodes_ = std::move(renumbered);
  root_ = new_index[root_];

  // Stable child order: smaller minimum descendant leaf first.
  std::vector<int> min_leaf(n, 0);
  for (int i : postorder()) {
    if (nodes_[i].is_leaf()) {
      min_leaf[i] = i;
    } else {
      auto& ch = nodes_[i].children;
      if (min_leaf[ch[0]] > min_leaf[ch[1]]) std::swap(ch[0], ch[1]);
      min_leaf[i] = std::min(min_leaf[ch[0]], min_leaf[ch[1]]);
    }
  }
}

std::optional<std::string> Phylogeny::structural_error() const {
  const int n = num_nodes();
  if (num_leaves_ < 2) return "fewer than two leaves";
  if (n != 2 * num_leaves_ - 1) return "node count is not 2L-1";
  if (root_ < 0 || root_ >= n) return "missing root";
  if (nodes_[root_].parent != -1) return "root has a parent";
  if (nodes_[root_].n_cats != 0) return "catastrophes recorded above the root";
  int leaf_count = 0;
  for (int i = 0; i < n; ++i) {
    const auto& node = nodes_[i];
    if (node.is_leaf()) {
      ++leaf_count;
      if (i >= num_leaves_) return "leaf stored at an internal index";
      if (node.children[1] >= 0) return "half-formed node " + std::to_string(i);
      if (node.label.empty()) return "leaf " + std::to_string(i) + " has no label";
    } else {
      if (i < num_leaves_) return "internal node stored at a leaf index";
      if (node.children[1] < 0) return "internal node " + std::to_string(i) + " is not binary";
      for (int c : node.children) {
        if (c < 0 || c >= n) return "child index out of range";
        if (nodes_[c].parent != i) return "parent/child link mismatch at node " + std::to_string(i);
        if (!(nodes_[c].age < node.age))
          return "age does not increase from node " + std::to_string(c) + " to its parent";
      }
    }
    if (node.n_cats < 0) return "negative catastrophe count";
  }
  if (leaf_count != num_leaves_) return "leaf count mismatch";
  // Reachability from the root (catches cycles and orphans).
  std::vector<char> seen(n, 0);
  std::vector<int> stack{root_};
  int visited = 0;
  while (!stack.empty()) {
    int i = stack.back();
    stack.pop_back();
    if (seen[i]) return "cycle detected at node " + std::to_string(i);
    seen[i] = 1;
    ++visited;
    if (!nodes_[i].is_leaf()) {
      stack.push_back(nodes_[i].children[0]);
      stack.push_back(nodes_[i].children[1]);
    }
  }
  if (visited != n) return "unreachable nodes";
  return std::nullopt;
}

bool Phylogeny::same_topology_and_ages(const Phylogeny& other, double age_tol) const {
  if (num_leaves_ != other.num_leaves_ || num_nodes() != other.num_nodes()) return false;
  Phylogeny a = *this, b = other;
  a.canonicalize();
  b.canonicalize();
  for (int i = 0; i < a.num_nodes(); ++i) {
    if (a.at(i).label != b.at(i).label) return false;
    if (a.at(i).parent != b.at(i).parent) return false;
    if (a.at(i).children != b.at(i).children) return false;
    if (a.at(i).n_cats != b.at(i).n_cats) return false;
    if (std::abs(a.at(i).age - b.at(i).age) > age_tol) return false;
  }
  return true;
}

Phylogeny Phylogeny::from_parts(std::vector<PhyloNode> nodes, int num_leaves) {
  Phylogeny t;
  t.nodes_ = std::move(nodes);
  t.num_leaves_ = num_leaves;
  t.root_ = -1;
  for (int i = 0; i < t.num_nodes(); ++i)
    if (t.nodes_[i].parent < 0) {
      if (t.root_ >= 0) throw std::runtime_error("from_parts: multiple roots");
      t.root_ = i;
    }
  if (t.root_ < 0) throw std::runtime_error("from_parts: no root");
  t.canonicalize();
  if (auto err = t.structural_error()) throw std::runtime_error("from_parts: " + *err);
  return t;
}

Phylogeny Phylogeny::single_leaf(std::string label, double age) {
  Phylogeny t;
  PhyloNode leaf;
  leaf.label = std::move(label);
  leaf.age = age;
  t.nodes_.push_back(std::move(leaf));
  t.num_leaves_ = 1;
  t.root_ = 0;
  return t;
}

Phylogeny Phylogeny::join(const Phylogeny& left, const Phylogeny& right, double root_age) {
  Phylogeny t;
  t.num_leaves_ = left.num_leaves_ + right.num_leaves_;
  const int n = left.num_nodes() + right.num_nodes() + 1;
  t.nodes_.resize(n);

  // Leaves of the right tree shift by the left leaf count; internal nodes of
  // both shift past all leaves.
  auto map_left = [&](int i) { return i < left.num_leaves_ ? i : i + right.num_leaves_; };
  auto map_right = [&](int i) {
    return i < right.num_leaves_ ? i + left.num_leaves_ : i + left.num_nodes();
  };
  for (int i = 0; i < left.num_nodes(); ++i) {
    PhyloNode node = left.at(i);
    if (node.parent >= 0) node.parent = map_left(node.parent);
    for (int& c : node.children)
      if (c >= 0) c = map_left(c);
    t.nodes_[map_left(i)] = std::move(node);
  }
  for (int i = 0; i < right.num_nodes(); ++i) {
    PhyloNode node = right.at(i);
    if (node.parent >= 0) node.parent = map_right(node.parent);
    for (int& c : node.children)
      if (c >= 0) c = map_right(c);
    t.nodes_[map_right(i)] = std::move(node);
  }
  const int new_root = n - 1;
  PhyloNode root;
  root.age = root_age;
  root.children = {map_left(left.root_), map_right(right.root_)};
  t.nodes_[new_root] = root;
  t.nodes_[root.children[0]].parent = new_root;
  t.nodes_[root.children[1]].parent = new_root;
  t.root_ = new_root;
  t.canonicalize();
  return t;
}

Phylogeny random_ultrametric_tree(const std::vector<std::string>& labels, double root_age,
                                  std::mt19937_64& rng) {
  if (labels.size() < 2) throw std::runtime_error("random tree needs at least two labels");
  std::vector<Phylogeny> forest;
  forest.reserve(labels.size());
  for (const auto& l : labels) forest.push_back(Phylogeny::single_leaf(l, 0.0));

  const int n_joins = static_cast<int>(labels.size()) - 1;
  // Strictly increasing join ages up to root_age.
  std::vector<double> ages(n_joins);
  std::uniform_real_distribution<double> u01(0.05, 0.95);
  for (int k = 0; k < n_joins - 1; ++k) ages[k] = root_age * u01(rng);
  ages[n_joins - 1] = root_age;
  std::sort(ages.begin(), ages.end() - (n_joins > 1 ? 1 : 0));
  for (int k = 1; k < n_joins; ++k)
    if (ages[k] <= ages[k - 1]) ages[k] = ages[k - 1] + 1e-6 * root_age;

  for (int k = 0; k < n_joins; ++k) {
    std::uniform_int_distribution<std::size_t> pick(0, forest.size() - 1);
    std::size_t i = pick(rng);
    std::size_t j = pick(rng);
    while (j == i) j = pick(rng);
    if (i > j) std::swap(i, j);
    Phylogeny joined = Phylogeny::join(forest[i], forest[j], ages[k]);
    forest[j] = std::move(forest.back());
    forest.pop_back();
    forest[i] = std::move(joined);
  }
  return forest[0];
}

}  // namespace dollocat
