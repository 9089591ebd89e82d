#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dollocat/phylo_tree.hpp"

namespace dollocat {

// A historically attested constraint: either a monophyletic clade whose root
// age lies in an interval, or an age interval for a single leaf.
struct Calibration {
  enum class Kind { clade, leaf_age };
  Kind kind = Kind::clade;
  std::vector<std::string> leaves;  // one entry for leaf_age
  std::optional<double> min_age;
  std::optional<double> max_age;

  std::string describe() const;
};

struct CalibrationSet {
  std::vector<Calibration> constraints;
  double root_cap = 16000.0;  // T

  CalibrationSet without(int index) const;
  static CalibrationSet load_json(const std::string& text);
  std::string to_json() const;
};

struct Violation {
  std::string message;
};

// Thrown for trees that are not structurally sound (distinct from constraint
// violations, which are reported as a list).
struct StructuralError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InfeasibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Empty result iff the tree satisfies every calibration, the age ordering and
// the root cap.
std::vector<Violation> validate(const Phylogeny& tree, const CalibrationSet& cals);

bool satisfies(const Phylogeny& tree, const Calibration& c);

// Tightest per-node age intervals implied by the calibrations, the leaf ages,
// the ancestor/descendant ordering and the root cap, for the tree's topology.
// Throws InfeasibleError if some interval is empty.
struct NodeAgeBounds {
  std::vector<double> lower, upper;
};
NodeAgeBounds node_age_bounds(const Phylogeny& tree, const CalibrationSet& cals);

// Log density of the tree prior: the product of 1/(t_r - t_i^-) over nodes
// whose age is capped only by the root bound, the root itself excluded.
// Minus infinity outside the calibrated space.
double prior_log_density(const Phylogeny& tree, const CalibrationSet& cals);

// Which node ages are free coordinates of the sampler state: all internal
// nodes, plus leaves that carry an age interval in `movability`.
std::vector<char> movable_ages(const Phylogeny& tree, const CalibrationSet& movability);

}  // namespace dollocat
