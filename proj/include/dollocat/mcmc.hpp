#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dollocat/calibration.hpp"
#include "dollocat/dollo_likelihood.hpp"
#include "dollocat/phylo_tree.hpp"
#include "dollocat/rng.hpp"
#include "dollocat/trait_matrix.hpp"

namespace dollocat {

enum class MoveKind : int {
  age_slide = 0,
  spr,
  cat_shift,
  cat_birth_death,
  scale,
  mu_walk,
  kappa_walk,
  rho_walk,
  xi_walk,
  count
};
const char* move_name(MoveKind kind);

struct MoveWeights {
  double age_slide = 4;
  double spr = 3;
  double cat_shift = 1;
  double cat_birth_death = 1;
  double scale = 1;
  double mu_walk = 1;
  double kappa_walk = 1;
  double rho_walk = 1;
  double xi_walk = 2;

  double of(MoveKind kind) const;
};

struct ProposalScales {
  double scale_log_step = 0.08;   // time-scaling factor, symmetric in log
  double mu_log_step = 0.25;
  double rho_log_step = 0.6;
  double kappa_step = 0.15;       // reflected walk
  double xi_log_step = 0.5;       // multiplicative walk on 1 - xi
};

struct ChainConfig {
  long iterations = 10'000'000;   // runs of this order proved ample for the full-size fits
  long thin = 1000;
  long burn_in = 0;
  std::uint64_t seed = 1;
  bool prior_only = false;
  long recheck_interval = 50'000;  // cached-posterior audit period
  MoveWeights weights;
  ProposalScales scales;
  PriorConfig prior;

  static ChainConfig load_json(const std::string& text);
  std::string to_json() const;
};

struct MoveStats {
  long proposed = 0;
  long accepted = 0;
  long skipped = 0;  // no valid proposal existed; counts as staying put
};

struct ChainState {
  Phylogeny tree;
  ModelParams params;
  double log_post = 0;
  long iteration = 0;
};

struct TraceRow {
  long iteration = 0;
  double log_post = 0, mu = 0, kappa = 0, rho = 0, root_age = 0;
  int k_total = 0;
  std::vector<double> xi;
};

struct ChainTrace {
  std::vector<TraceRow> rows;
  std::vector<Phylogeny> trees;  // aligned with rows
  std::array<MoveStats, static_cast<int>(MoveKind::count)> stats{};

  std::vector<double> column(const std::string& name) const;  // mu, kappa, rho, root_age, ...
  // Geyer effective sample sizes for the monitored scalars.
  std::vector<std::pair<std::string, double>> ess_summary() const;

  void write_trace(std::ostream& out) const;
  void write_trees(std::ostream& out) const;
  static ChainTrace read_trace(std::istream& in);  // rows only
};

// A feasible starting point: clustering on trait Hamming distances folded into
// the constraint clades, ages spread inside their admissible windows, and
// moment-matched rates.
ChainState initial_state(const TraitMatrix* data, const RegistrationRule& rule, const CalibrationSet& cals,
                         const ChainConfig& config, const std::vector<std::string>& labels);

class Sampler {
 public:
  // `movability` controls which leaf ages float; by default the constraint set
  // itself. Cross-validation passes the full set here while constraining on a
  // reduced one.
  Sampler(const TraitMatrix* data, const RegistrationRule& rule, CalibrationSet cals, ChainConfig config,
          std::optional<CalibrationSet> movability = std::nullopt,
          std::optional<ChainState> init = std::nullopt);

  const ChainState& state() const { return state_; }
  const std::array<MoveStats, static_cast<int>(MoveKind::count)>& stats() const { return stats_; }

  void step();
  ChainTrace run();  // iterations from the config, recording every `thin`

  double target(const Phylogeny& tree, const ModelParams& params) const;

  // Proposals mutate the candidate in place and report the log Hastings
  // ratio; false means no valid move existed (the chain stays put).
  bool propose_age_slide(Phylogeny& tree, double& log_hastings);
  bool propose_spr(Phylogeny& tree, double& log_hastings);
  bool propose_cat_shift(Phylogeny& tree, double& log_hastings);
  bool propose_cat_birth_death(Phylogeny& tree, double& log_hastings);
  bool propose_scale(Phylogeny& tree, ModelParams& params, double& log_hastings);
  bool propose_scalar(MoveKind kind, ModelParams& params, double& log_hastings);

 private:
  MoveKind pick_move();

  RegistrationRule rule_;
  CalibrationSet cals_;
  CalibrationSet movability_;
  ChainConfig config_;
  std::optional<PreparedData> data_;
  ChainState state_;
  Rng rng_;
  std::array<MoveStats, static_cast<int>(MoveKind::count)> stats_{};
};

// Convenience wrapper: build a sampler and run it.
ChainTrace run_chain(const TraitMatrix* data, const RegistrationRule& rule, const CalibrationSet& cals,
                     const ChainConfig& config, const std::vector<std::string>& labels = {});

// Edges neighbouring the edge above `i` for the catastrophe-shift move (child,
// sibling and parent edges; the infinite root edge is never a neighbour).
std::vector<int> catastrophe_shift_neighbours(const Phylogeny& tree, int i);

}  // namespace dollocat
