#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dollocat/dollo_likelihood.hpp"
#include "dollocat/phylo_tree.hpp"
#include "dollocat/rng.hpp"
#include "dollocat/trait_matrix.hpp"

namespace dollocat {

struct CatastrophePlacement {
  int node = -1;    // edge above this node
  double age = 0;   // within (node age, parent age)
};

// Draws per-edge Poisson(rho * length) counts, writes them onto the tree and
// returns uniform positions for each event.
std::vector<CatastrophePlacement> sample_catastrophes(Phylogeny& tree, double rho, Rng& rng);

// Uniform positions for catastrophe counts already present on the tree.
std::vector<CatastrophePlacement> place_catastrophes_uniform(const Phylogeny& tree, Rng& rng);

// Full generative run of the birth/death/catastrophe process down the tree,
// one column per class that was alive at the root or born below it. Classes
// enter the root at the Poisson(lambda/mu) equilibrium. With borrow_rate > 0,
// each living cognate is additionally copied, at that rate per year, into one
// uniformly chosen other contemporaneous lineage.
TraitMatrix simulate_full_matrix(const Phylogeny& tree, const ModelParams& params,
                                 const std::vector<CatastrophePlacement>& catastrophes, Rng& rng,
                                 double borrow_rate = 0.0);

using MaskMatrix = std::vector<std::vector<std::uint8_t>>;  // rows x columns, 1 = observable

struct MaskedMatrix {
  MaskMatrix mask;
  TraitMatrix data;
};
MaskedMatrix apply_masking(const TraitMatrix& full, const std::vector<double>& xi, Rng& rng);

// Keeps exactly the columns whose (Y, Q) pass the rule, order preserved,
// classes renumbered.
TraitMatrix apply_registration(const TraitMatrix& masked, const RegistrationRule& rule);

struct SyntheticBundle {
  Phylogeny tree;  // with realized catastrophe counts
  ModelParams params;
  RegistrationRule rule;
  std::uint64_t seed = 0;
  double borrow_rate = 0.0;
  std::vector<CatastrophePlacement> catastrophes;
  TraitMatrix full;        // D*
  MaskMatrix mask;         // I*
  TraitMatrix masked;      // D~
  TraitMatrix registered;  // D
};

// End-to-end draw: catastrophes (if sample_cats), full matrix, masking,
// registration. Identical seeds give byte-identical bundles.
SyntheticBundle make_bundle(const Phylogeny& tree, const ModelParams& params, const RegistrationRule& rule,
                            std::uint64_t seed, double borrow_rate = 0.0, bool sample_cats = true);

void write_bundle(const SyntheticBundle& bundle, const std::string& directory);

}  // namespace dollocat
