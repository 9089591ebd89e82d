#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dollocat {

struct PhyloNode {
  int parent = -1;                    // -1 for the root (the Adam edge is implicit)
  std::array<int, 2> children{-1, -1};
  double age = 0.0;                   // years before present
  int n_cats = 0;                     // catastrophes on the edge to the parent
  std::string label;                  // nonempty for leaves

  bool is_leaf() const { return children[0] < 0; }
};

// Rooted binary tree with node ages and per-edge catastrophe counts.
// Leaves occupy indices 0..L-1 and keep them for the lifetime of the tree;
// internal nodes occupy L..2L-2 and are renumbered by canonicalize() so that
// ascending index means ascending age (the root is always the last node).
// The Adam node is implicit: the edge above the root has infinite length and
// never carries catastrophes.
class Phylogeny {
 public:
  Phylogeny() = default;

  int num_leaves() const { return num_leaves_; }
  int num_nodes() const { return static_cast<int>(nodes_.size()); }
  int root() const { return root_; }

  const PhyloNode& at(int i) const { return nodes_[i]; }
  PhyloNode& at(int i) { return nodes_[i]; }
  const std::vector<PhyloNode>& nodes() const { return nodes_; }

  double edge_length(int child) const;   // infinity above the root
  int sibling(int i) const;
  int leaf_index(std::string_view label) const;  // -1 if absent

  std::vector<int> postorder() const;            // children before parents
  std::vector<int> subtree_leaves(int i) const;
  std::uint64_t leaf_mask(int i) const;          // bitset of leaves below i (L <= 64)
  int mrca(std::span<const int> leaves) const;

  double tree_length() const;                    // finite edges only
  int total_catastrophes() const;

  // Renumbers internal nodes so indices follow ascending age and orders each
  // node's children by their smallest descendant leaf.
  void canonicalize();

  // Structural well-formedness (binary, acyclic, consistent links, strictly
  // increasing ages toward the root, no catastrophes above the root).
  // Returns an error description, or nullopt if sound.
  std::optional<std::string> structural_error() const;

  bool same_topology_and_ages(const Phylogeny& other, double age_tol = 0.0) const;

  // Builders.
  static Phylogeny from_parts(std::vector<PhyloNode> nodes, int num_leaves);
  // Joins two subtrees under a fresh root of the given age.
  static Phylogeny join(const Phylogeny& left, const Phylogeny& right, double root_age);
  static Phylogeny single_leaf(std::string label, double age);

 private:
  std::vector<PhyloNode> nodes_;
  int num_leaves_ = 0;
  int root_ = -1;
};

// Random coalescent-style labeled tree: repeatedly joins two uniformly chosen
// lineages, with coalescence ages spread up to the requested root age. Handy
// for tests and synthetic studies.
Phylogeny random_ultrametric_tree(const std::vector<std::string>& labels, double root_age,
                                  std::mt19937_64& rng);

}  // namespace dollocat
