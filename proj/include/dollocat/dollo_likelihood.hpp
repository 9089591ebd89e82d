#pragma once

#include <optional>
#include <span>
#include <vector>

#include "dollocat/calibration.hpp"
#include "dollocat/phylo_tree.hpp"
#include "dollocat/trait_matrix.hpp"

namespace dollocat {

struct ModelParams {
  double mu = 1e-4;     // deaths per year
  double kappa = 0.0;   // death probability at a catastrophe, in [0,1)
  double rho = 1e-6;    // catastrophes per year
  std::vector<double> xi;  // per-leaf observation probabilities, in (0,1]
  std::optional<double> lambda;  // births per year; simulator only, marginalized in inference
};

struct PriorConfig {
  double rho_min = 1e-9;
  double rho_max = 1e-2;
};

// Virtual branch years equivalent to one catastrophe: -log(1-kappa)/mu.
double catastrophe_virtual_time(double mu, double kappa);

// Survival probability over the edge above `child`, catastrophes included:
// exp(-mu * (dt + k * T_C)), clamped to stay positive. Zero above the root.
double effective_survival(const Phylogeny& tree, const ModelParams& params, int child);

// Subtree quantities for one node, conditional on a class alive at the node.
// u{n}: probability of exactly n visible presents among the subtree leaves;
// v{n}: same for presents-plus-unknowns; s abbreviates the subtree leaf count.
// The companions cover masking patterns and extinction:
//   mask_all      all subtree leaves unobserved
//   mask_one_vis  exactly one subtree leaf observed, the rest unobserved
//   xi_all        all subtree leaves observed
//   extinct       the class reaches no subtree leaf
//   all_survive   the class reaches every subtree leaf
struct NodeProfile {
  double u0 = 0, u1 = 0, us = 0, us1 = 0;
  double v0 = 0, vs = 0, vs1 = 0;
  double mask_all = 1, mask_one_vis = 0, xi_all = 1;
  double extinct = 0, all_survive = 1;
  int n_leaves = 0;
};

std::vector<NodeProfile> compute_profiles(const Phylogeny& tree, const ModelParams& params);

// Probability that a class born at the bottom of the edge above `node` ends up
// registered under the rule. Assembled by inclusion-exclusion over the rule's
// discard events.
double registration_prob(const Phylogeny& tree, const ModelParams& params,
                         const std::vector<NodeProfile>& profiles, const RegistrationRule& rule,
                         int node);

// X = (1/mu) * sum over edges of P_registered * (1 - survival); the expected
// registered class count is lambda * X.
double normalizer_X(const Phylogeny& tree, const ModelParams& params, const RegistrationRule& rule);

// Per-column birth-placement sum: tau = (1/mu) * sum over candidate edges of
// the pruning value times (1 - survival). Masking factors live elsewhere.
// `column` has one state per leaf; it must contain a visible present.
double trait_term(const Phylogeny& tree, const ModelParams& params, std::span<const TraitState> column);

// Deduplicated columns: identical leaf patterns share one evaluation.
struct ColumnPattern {
  std::vector<TraitState> states;
  int count = 0;
};
std::vector<ColumnPattern> dedupe_columns(const TraitMatrix& data);

struct LikelihoodParts {
  double X = 0;
  std::vector<double> tau;        // aligned with the pattern list
  std::vector<int> multiplicity;  // column count per pattern
  double log_mask = 0;            // sum over rows of the Bernoulli masking factor
  int n_columns = 0;
};
LikelihoodParts compute_likelihood_parts(const Phylogeny& tree, const ModelParams& params,
                                         const TraitMatrix& data, const RegistrationRule& rule);

// Log likelihood at fixed birth rate lambda (the 1/N! constant is dropped):
// -lambda*X + N log lambda + sum_a log tau_a + log mask factors.
double log_likelihood(const Phylogeny& tree, const ModelParams& params, const TraitMatrix& data,
                      const RegistrationRule& rule, double lambda);

// Log posterior with lambda integrated out under the 1/lambda prior:
//   lgamma(N) - N log X + sum_a log tau_a + masking factors
//   - log mu - log rho + f_G(g|T) + per-edge Poisson catastrophe prior.
// Minus infinity outside the calibrated space or the rho bounds. Throws if the
// data are inconsistent with the registration rule.
double log_posterior(const Phylogeny& tree, const ModelParams& params, const TraitMatrix& data,
                     const RegistrationRule& rule, const CalibrationSet& cals, const PriorConfig& prior);

// The tree/catastrophe/rate prior alone (f_G + catastrophe prior + 1/(mu rho)
// within bounds); the target of prior-only chains.
double log_prior(const Phylogeny& tree, const ModelParams& params, const CalibrationSet& cals,
                 const PriorConfig& prior);

// Hot-loop variant: dedupe and row counts done once up front.
struct PreparedData {
  std::vector<ColumnPattern> patterns;
  std::vector<int> row_unknowns;
  int n_columns = 0;
  int n_languages = 0;
};
PreparedData prepare_data(const TraitMatrix& data, const RegistrationRule& rule);
double log_posterior_prepared(const Phylogeny& tree, const ModelParams& params, const PreparedData& data,
                              const RegistrationRule& rule, const CalibrationSet& cals,
                              const PriorConfig& prior);

void validate_params(const ModelParams& params, int num_leaves);

}  // namespace dollocat
