#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dollocat/calibration.hpp"
#include "dollocat/mcmc.hpp"
#include "dollocat/phylo_tree.hpp"

namespace dollocat {

// Shortest interval containing ceil(level * n) of the samples.
std::pair<double, double> hpd_interval(std::vector<double> values, double level = 0.95);

struct ConsensusNode {
  std::uint64_t clade = 0;     // leaf bitmask
  std::vector<int> children;   // indices into ConsensusTree::nodes
  double support = 1.0;        // fraction of samples containing the clade
  double mean_age = 0.0;       // conditional on the clade being present
  double mean_cats = 0.0;      // mean catastrophes on the edge above, same conditioning
  int display_cats = 0;        // mean_cats rounded for display
  int leaf = -1;               // >= 0 for leaves
};

// Majority-rule consensus: keeps the clades present in more than half of the
// samples; where nothing reaches a majority the tree multifurcates. Node ages
// and catastrophe counts are conditional means over the supporting samples.
struct ConsensusTree {
  std::vector<std::string> leaf_labels;
  std::vector<ConsensusNode> nodes;
  int root = -1;

  // Newick with [&age=..] on internal nodes; supports below the threshold are
  // labelled with [&support=..].
  std::string to_newick(double label_below = 0.95) const;
  std::string support_table() const;
};

ConsensusTree majority_consensus(std::span<const Phylogeny> samples);

struct SummaryRow {
  std::string name;
  double mean = 0, sd = 0, hpd_lo = 0, hpd_hi = 0, ess = 0;
};
std::vector<SummaryRow> posterior_summary(const ChainTrace& trace);
std::string summary_table(const std::vector<SummaryRow>& rows);

// One leave-one-out calibration test: refit with constraint `drop` removed,
// then compare the posterior and prior probabilities of the constraint still
// holding. 2 log B above 5 is flagged as strong conflict.
struct XvalReport {
  int constraint = -1;
  std::string description;
  double freed_age_hpd_lo = 0, freed_age_hpd_hi = 0;
  std::optional<double> bound_lo, bound_hi;  // the dropped constraint's interval
  double p_posterior = 0, se_posterior = 0;
  double p_prior = 0, se_prior = 0;
  double two_log_bayes = 0;
  double se_two_log_bayes = 0;
  enum class Kind { exact, lower_bound, upper_bound } kind = Kind::exact;
  bool strong_conflict = false;

  std::string to_line() const;
  static std::string header();
};

XvalReport bayes_factor_xval(const TraitMatrix& data, const RegistrationRule& rule,
                             const CalibrationSet& cals, int drop, const ChainConfig& config);

}  // namespace dollocat
