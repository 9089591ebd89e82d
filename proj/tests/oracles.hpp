#pragma once

// Brute-force reference implementations used to pin the pruning recursions.
// Everything here enumerates outcomes directly (edge survival configurations,
// masking patterns, missing-data completions) and never calls the recursive
// code paths it is checking. Only usable for tiny trees.

#include <cmath>
#include <cstdint>
#include <vector>

#include "dollocat/dollo_likelihood.hpp"
#include "dollocat/phylo_tree.hpp"
#include "dollocat/trait_matrix.hpp"

namespace dollocat::oracle {

struct EdgeSetup {
  std::vector<int> edges;          // child node of every finite edge below the birth node
  std::vector<double> delta;       // per tree node
};

inline EdgeSetup subtree_edges(const Phylogeny& tree, const ModelParams& params, int node) {
  EdgeSetup s;
  s.delta.assign(tree.num_nodes(), 0.0);
  for (int i = 0; i < tree.num_nodes(); ++i)
    if (i != tree.root()) s.delta[i] = effective_survival(tree, params, i);
  std::vector<int> stack{node};
  while (!stack.empty()) {
    int n = stack.back();
    stack.pop_back();
    if (n != node) s.edges.push_back(n);
    if (!tree.at(n).is_leaf()) {
      stack.push_back(tree.at(n).children[0]);
      stack.push_back(tree.at(n).children[1]);
    }
  }
  return s;
}

// P[the class born at `node` reaches exactly the leaf set `want` (a bitmask
// over all leaves)], by enumerating every survival configuration.
inline double class_prob(const Phylogeny& tree, const ModelParams& params, int node, std::uint64_t want) {
  const auto setup = subtree_edges(tree, params, node);
  if ((want | tree.leaf_mask(node)) != tree.leaf_mask(node)) return 0.0;
  const int ne = static_cast<int>(setup.edges.size());
  double total = 0.0;
  for (std::uint64_t config = 0; config < (1ull << ne); ++config) {
    double prob = 1.0;
    for (int e = 0; e < ne; ++e)
      prob *= ((config >> e) & 1ull) ? setup.delta[setup.edges[e]] : 1.0 - setup.delta[setup.edges[e]];
    // reachable leaves under this survival configuration
    std::uint64_t reach = 0;
    std::vector<int> stack{node};
    while (!stack.empty()) {
      int n = stack.back();
      stack.pop_back();
      if (tree.at(n).is_leaf()) reach |= 1ull << n;
      if (tree.at(n).is_leaf()) continue;
      for (int c : tree.at(n).children) {
        bool survives = true;
        if (c != node) {
          for (int e = 0; e < ne; ++e)
            if (setup.edges[e] == c) survives = ((config >> e) & 1ull) != 0;
        }
        if (survives) stack.push_back(c);
      }
    }
    if (reach == want) total += prob;
  }
  return total;
}

// P[a class born at `node` produces a registered column], by enumerating
// survival configurations jointly with all 2^L masking patterns.
inline double registration_prob(const Phylogeny& tree, const ModelParams& params,
                                const RegistrationRule& rule, int node) {
  const auto setup = subtree_edges(tree, params, node);
  const int ne = static_cast<int>(setup.edges.size());
  const int L = tree.num_leaves();
  double total = 0.0;
  for (std::uint64_t config = 0; config < (1ull << ne); ++config) {
    double prob = 1.0;
    for (int e = 0; e < ne; ++e)
      prob *= ((config >> e) & 1ull) ? setup.delta[setup.edges[e]] : 1.0 - setup.delta[setup.edges[e]];
    std::uint64_t reach = 0;
    std::vector<int> stack{node};
    while (!stack.empty()) {
      int n = stack.back();
      stack.pop_back();
      if (tree.at(n).is_leaf()) {
        reach |= 1ull << n;
        continue;
      }
      for (int c : tree.at(n).children) {
        bool survives = true;
        if (c != node) {
          for (int e = 0; e < ne; ++e)
            if (setup.edges[e] == c) survives = ((config >> e) & 1ull) != 0;
        }
        if (survives) stack.push_back(c);
      }
    }
    for (std::uint64_t mask = 0; mask < (1ull << L); ++mask) {
      double pmask = 1.0;
      int y = 0, q = 0;
      for (int l = 0; l < L; ++l) {
        if ((mask >> l) & 1ull) {
          pmask *= params.xi[l];
          if ((reach >> l) & 1ull) ++y;
        } else {
          pmask *= 1.0 - params.xi[l];
          ++q;
        }
      }
      if (rule.keeps(y, q, L)) total += prob * pmask;
    }
  }
  return total;
}

inline double normalizer(const Phylogeny& tree, const ModelParams& params, const RegistrationRule& rule) {
  double sum = 0.0;
  for (int i = 0; i < tree.num_nodes(); ++i) {
    double omd = i == tree.root() ? 1.0 : 1.0 - effective_survival(tree, params, i);
    sum += registration_prob(tree, params, rule, i) * omd;
  }
  return sum / params.mu;
}

// Birth-placement sum for a full (gap-free) column given as a leaf bitmask.
inline double full_column_term(const Phylogeny& tree, const ModelParams& params, std::uint64_t want) {
  double sum = 0.0;
  for (int i = 0; i < tree.num_nodes(); ++i) {
    double omd = i == tree.root() ? 1.0 : 1.0 - effective_survival(tree, params, i);
    sum += class_prob(tree, params, i, want) * omd;
  }
  return sum / params.mu;
}

// Missing-data column term: the sum of full-column terms over all completions
// of the unknown cells.
inline double trait_term(const Phylogeny& tree, const ModelParams& params,
                         std::span<const TraitState> column) {
  const int L = tree.num_leaves();
  std::vector<int> unknown;
  std::uint64_t base = 0;
  for (int l = 0; l < L; ++l) {
    if (column[l] == TraitState::present) base |= 1ull << l;
    if (column[l] == TraitState::unknown) unknown.push_back(l);
  }
  double sum = 0.0;
  for (std::uint64_t fill = 0; fill < (1ull << unknown.size()); ++fill) {
    std::uint64_t want = base;
    for (std::size_t u = 0; u < unknown.size(); ++u)
      if ((fill >> u) & 1ull) want |= 1ull << unknown[u];
    sum += full_column_term(tree, params, want);
  }
  return sum;
}

// Log likelihood at fixed lambda, same dropped constants as log_likelihood().
inline double log_likelihood(const Phylogeny& tree, const ModelParams& params, const TraitMatrix& data,
                             const RegistrationRule& rule, double lambda) {
  double ll = -lambda * normalizer(tree, params, rule) + data.num_classes() * std::log(lambda);
  for (int a = 0; a < data.num_classes(); ++a) {
    ll += std::log(oracle::trait_term(tree, params, data.column(a)));
    for (int i = 0; i < data.num_languages(); ++i)
      ll += data.at(i, a) == TraitState::unknown ? std::log(1.0 - params.xi[i]) : std::log(params.xi[i]);
  }
  return ll;
}

}  // namespace dollocat::oracle
