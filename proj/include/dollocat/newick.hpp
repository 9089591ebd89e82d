#pragma once

#include <string>
#include <string_view>

#include "dollocat/phylo_tree.hpp"

namespace dollocat {

// Newick with branch lengths in years, catastrophe counts as [&k=<int>] after
// the branch length, and the absolute root age as [&age=<years>] on the root.
// Example: ((A:1000[&k=2],B:1000):500,C:1500):0[&age=1500];
std::string encode_newick(const Phylogeny& tree);

// Inverse of encode_newick. Without a root [&age=...] annotation the deepest
// leaf is placed at age zero. Malformed input raises an error naming the
// offending character position.
Phylogeny decode_newick(std::string_view text);

}  // namespace dollocat
