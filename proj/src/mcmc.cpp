#include "dollocat/mcmc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "dollocat/diagnostics.hpp"
#include "dollocat/newick.hpp"

namespace dollocat {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

const char* move_name(MoveKind kind) {
  switch (kind) {
    case MoveKind::age_slide: return "age_slide";
    case MoveKind::spr: return "spr";
    case MoveKind::cat_shift: return "cat_shift";
    case MoveKind::cat_birth_death: return "cat_birth_death";
    case MoveKind::scale: return "scale";
    case MoveKind::mu_walk: return "mu_walk";
    case MoveKind::kappa_walk: return "kappa_walk";
    case MoveKind::rho_walk: return "rho_walk";
    case MoveKind::xi_walk: return "xi_walk";
    default: return "?";
  }
}

double MoveWeights::of(MoveKind kind) const {
  switch (kind) {
    case MoveKind::age_slide: return age_slide;
    case MoveKind::spr: return spr;
    case MoveKind::cat_shift: return cat_shift;
    case MoveKind::cat_birth_death: return cat_birth_death;
    case MoveKind::scale: return scale;
    case MoveKind::mu_walk: return mu_walk;
    case MoveKind::kappa_walk: return kappa_walk;
    case MoveKind::rho_walk: return rho_walk;
    case MoveKind::xi_walk: return xi_walk;
    default: return 0;
  }
}

ChainConfig ChainConfig::load_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ChainConfig c;
  c.iterations = j.value("iterations", c.iterations);
  c.thin = j.value("thin", c.thin);
  c.burn_in = j.value("burn_in", c.burn_in);
  c.seed = j.value("seed", c.seed);
  c.prior_only = j.value("prior_only", c.prior_only);
  c.recheck_interval = j.value("recheck_interval", c.recheck_interval);
  if (j.contains("rho_bounds")) {
    c.prior.rho_min = j["rho_bounds"].at(0).get<double>();
    c.prior.rho_max = j["rho_bounds"].at(1).get<double>();
  }
  if (j.contains("move_weights")) {
    const auto& w = j["move_weights"];
    c.weights.age_slide = w.value("age_slide", c.weights.age_slide);
    c.weights.spr = w.value("spr", c.weights.spr);
    c.weights.cat_shift = w.value("cat_shift", c.weights.cat_shift);
    c.weights.cat_birth_death = w.value("cat_birth_death", c.weights.cat_birth_death);
    c.weights.scale = w.value("scale", c.weights.scale);
    c.weights.mu_walk = w.value("mu_walk", c.weights.mu_walk);
    c.weights.kappa_walk = w.value("kappa_walk", c.weights.kappa_walk);
    c.weights.rho_walk = w.value("rho_walk", c.weights.rho_walk);
    c.weights.xi_walk = w.value("xi_walk", c.weights.xi_walk);
  }
  if (j.contains("proposal_scales")) {
    const auto& s = j["proposal_scales"];
    c.scales.scale_log_step = s.value("scale_log_step", c.scales.scale_log_step);
    c.scales.mu_log_step = s.value("mu_log_step", c.scales.mu_log_step);
    c.scales.rho_log_step = s.value("rho_log_step", c.scales.rho_log_step);
    c.scales.kappa_step = s.value("kappa_step", c.scales.kappa_step);
    c.scales.xi_log_step = s.value("xi_log_step", c.scales.xi_log_step);
  }
  if (c.iterations <= 0) throw std::runtime_error("chain config: iterations must be positive");
  if (c.thin <= 0) throw std::runtime_error("chain config: thin must be positive");
  double total = 0;
  for (int k = 0; k < static_cast<int>(MoveKind::count); ++k) {
    double w = c.weights.of(static_cast<MoveKind>(k));
    if (w < 0) throw std::runtime_error("chain config: negative move weight");
    total += w;
  }
  if (total <= 0) throw std::runtime_error("chain config: all move weights are zero");
  return c;
}

std::string ChainConfig::to_json() const {
  nlohmann::json j;
  j["iterations"] = iterations;
  j["thin"] = thin;
  j["burn_in"] = burn_in;
  j["seed"] = seed;
  j["prior_only"] = prior_only;
  j["recheck_interval"] = recheck_interval;
  j["rho_bounds"] = {prior.rho_min, prior.rho_max};
  j["move_weights"] = {{"age_slide", weights.age_slide},
                       {"spr", weights.spr},
                       {"cat_shift", weights.cat_shift},
                       {"cat_birth_death", weights.cat_birth_death},
                       {"scale", weights.scale},
                       {"mu_walk", weights.mu_walk},
                       {"kappa_walk", weights.kappa_walk},
                       {"rho_walk", weights.rho_walk},
                       {"xi_walk", weights.xi_walk}};
  j["proposal_scales"] = {{"scale_log_step", scales.scale_log_step},
                          {"mu_log_step", scales.mu_log_step},
                          {"rho_log_step", scales.rho_log_step},
                          {"kappa_step", scales.kappa_step},
                          {"xi_log_step", scales.xi_log_step}};
  return j.dump(2);
}

std::vector<double> ChainTrace::column(const std::string& name) const {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    if (name == "logpost") out.push_back(r.log_post);
    else if (name == "mu") out.push_back(r.mu);
    else if (name == "kappa") out.push_back(r.kappa);
    else if (name == "rho") out.push_back(r.rho);
    else if (name == "root_age") out.push_back(r.root_age);
    else if (name == "k_total") out.push_back(r.k_total);
    else if (name.rfind("xi_", 0) == 0) out.push_back(r.xi.at(std::stoul(name.substr(3)) - 1));
    else throw std::runtime_error("unknown trace column " + name);
  }
  return out;
}

std::vector<std::pair<std::string, double>> ChainTrace::ess_summary() const {
  std::vector<std::pair<std::string, double>> out;
  for (const char* name : {"mu", "kappa", "rho", "root_age"}) {
    auto v = column(name);
    out.emplace_back(name, effective_sample_size(v));
  }
  return out;
}

void ChainTrace::write_trace(std::ostream& out) const {
  const int L = rows.empty() ? 0 : static_cast<int>(rows.front().xi.size());
  out << "iter\tlogpost\tmu\tkappa\trho\troot_age\tk_total";
  for (int i = 1; i <= L; ++i) out << "\txi_" << i;
  out << '\n';
  char buf[64];
  auto w = [&](double x) {
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    out << '\t' << buf;
  };
  for (const auto& r : rows) {
    out << r.iteration;
    w(r.log_post);
    w(r.mu);
    w(r.kappa);
    w(r.rho);
    w(r.root_age);
    out << '\t' << r.k_total;
    for (double x : r.xi) w(x);
    out << '\n';
  }
}

void ChainTrace::write_trees(std::ostream& out) const {
  for (const auto& t : trees) out << encode_newick(t) << '\n';
}

ChainTrace ChainTrace::read_trace(std::istream& in) {
  ChainTrace trace;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty trace file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) header.push_back(f);
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f;
    TraceRow r;
    int col = 0;
    while (std::getline(ss, f, '\t')) {
      const std::string& name = header.at(col);
      double v = std::stod(f);
      if (name == "iter") r.iteration = static_cast<long>(v);
      else if (name == "logpost") r.log_post = v;
      else if (name == "mu") r.mu = v;
      else if (name == "kappa") r.kappa = v;
      else if (name == "rho") r.rho = v;
      else if (name == "root_age") r.root_age = v;
      else if (name == "k_total") r.k_total = static_cast<int>(v);
      else if (name.rfind("xi_", 0) == 0) r.xi.push_back(v);
      ++col;
    }
    trace.rows.push_back(std::move(r));
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

struct Cluster {
  Phylogeny fragment;
  std::uint64_t mask = 0;
  int size = 0;
};

bool merge_allowed(std::uint64_t a, std::uint64_t b, const std::vector<std::uint64_t>& clade_masks) {
  const std::uint64_t ab = a | b;
  for (std::uint64_t c : clade_masks) {
    const std::uint64_t inter = ab & c;
    if (inter == 0) continue;
    if ((ab & ~c) == 0) continue;  // ab inside c
    if ((c & ~ab) == 0) continue;  // c completed inside ab
    return false;
  }
  return true;
}

double init_mu_guess(const TraitMatrix* data, const Phylogeny& tree) {
  if (!data) return 2e-4;
  const int L = data->num_languages();
  double dist_sum = 0, path_sum = 0;
  int pairs = 0;
  for (int i = 0; i < L; ++i)
    for (int j = i + 1; j < L; ++j) {
      int diff = 0, both = 0;
      for (int a = 0; a < data->num_classes(); ++a) {
        auto x = data->at(i, a), y = data->at(j, a);
        if (x == TraitState::unknown || y == TraitState::unknown) continue;
        ++both;
        if (x != y) ++diff;
      }
      if (both == 0) continue;
      std::vector<int> pair{i, j};
      int m = tree.mrca(pair);
      path_sum += 2 * tree.at(m).age - tree.at(i).age - tree.at(j).age;
      dist_sum += static_cast<double>(diff) / both;
      ++pairs;
    }
  if (pairs == 0 || path_sum <= 0) return 2e-4;
  double shared = std::clamp(1.0 - dist_sum / pairs, 0.05, 0.95);
  double mu = -std::log(shared) / (path_sum / pairs);
  return std::clamp(mu, 1e-6, 1e-2);
}

}  // namespace

ChainState initial_state(const TraitMatrix* data, const RegistrationRule& rule, const CalibrationSet& cals,
                         const ChainConfig& config, const std::vector<std::string>& labels_in) {
  (void)rule;
  std::vector<std::string> labels = data ? data->languages() : labels_in;
  const int L = static_cast<int>(labels.size());
  if (L < 2) throw std::runtime_error("initialization needs at least two languages");
  if (L > 64) throw std::runtime_error("at most 64 languages are supported");

  // Leaf ages: fixed at zero unless a leaf calibration says otherwise.
  std::vector<double> leaf_age(L, 0.0);
  for (const auto& c : cals.constraints) {
    if (c.kind != Calibration::Kind::leaf_age) continue;
    auto it = std::find(labels.begin(), labels.end(), c.leaves.at(0));
    if (it == labels.end()) throw std::runtime_error("calibration names unknown language " + c.leaves[0]);
    double lo = c.min_age.value_or(0.0);
    double hi = c.max_age.value_or(cals.root_cap);
    leaf_age[it - labels.begin()] = 0.5 * (lo + std::min(hi, cals.root_cap));
  }

  // Pairwise Hamming distances over mutually observed cells.
  std::vector<std::vector<double>> dist(L, std::vector<double>(L, 1.0));
  if (data) {
    for (int i = 0; i < L; ++i)
      for (int j = i + 1; j < L; ++j) {
        int diff = 0, both = 0;
        for (int a = 0; a < data->num_classes(); ++a) {
          auto x = data->at(i, a), y = data->at(j, a);
          if (x == TraitState::unknown || y == TraitState::unknown) continue;
          ++both;
          if (x != y) ++diff;
        }
        dist[i][j] = dist[j][i] = both > 0 ? static_cast<double>(diff) / both : 0.5;
      }
  }

  std::vector<std::uint64_t> clade_masks;
  for (const auto& c : cals.constraints) {
    if (c.kind != Calibration::Kind::clade) continue;
    std::uint64_t m = 0;
    for (const auto& leaf : c.leaves) {
      auto it = std::find(labels.begin(), labels.end(), leaf);
      if (it == labels.end()) throw std::runtime_error("calibration names unknown language " + leaf);
      m |= 1ull << (it - labels.begin());
    }
    clade_masks.push_back(m);
  }

  // Average-linkage clustering restricted to merges compatible with the clades.
  std::vector<Cluster> clusters;
  std::vector<std::vector<double>> cd(L, std::vector<double>(L));
  for (int i = 0; i < L; ++i) {
    clusters.push_back({Phylogeny::single_leaf(labels[i], leaf_age[i]), 1ull << i, 1});
    for (int j = 0; j < L; ++j) cd[i][j] = dist[i][j];
  }
  double height = *std::max_element(leaf_age.begin(), leaf_age.end());
  while (clusters.size() > 1) {
    int bi = -1, bj = -1;
    double best = kInf;
    for (std::size_t i = 0; i < clusters.size(); ++i)
      for (std::size_t j = i + 1; j < clusters.size(); ++j) {
        if (!merge_allowed(clusters[i].mask, clusters[j].mask, clade_masks)) continue;
        if (cd[i][j] < best) {
          best = cd[i][j];
          bi = static_cast<int>(i);
          bj = static_cast<int>(j);
        }
      }
    if (bi < 0) throw InfeasibleError("clade constraints are not laminar; no feasible topology");
    height += 1.0;  // placeholder ages, rewritten below
    Cluster merged{Phylogeny::join(clusters[bi].fragment, clusters[bj].fragment, height),
                   clusters[bi].mask | clusters[bj].mask, clusters[bi].size + clusters[bj].size};
    // average-linkage update
    std::vector<double> row(clusters.size());
    for (std::size_t k = 0; k < clusters.size(); ++k)
      row[k] = (clusters[bi].size * cd[bi][k] + clusters[bj].size * cd[bj][k]) /
               (clusters[bi].size + clusters[bj].size);
    clusters[bi] = std::move(merged);
    for (std::size_t k = 0; k < clusters.size(); ++k) cd[bi][k] = cd[k][bi] = row[k];
    clusters.erase(clusters.begin() + bj);
    cd.erase(cd.begin() + bj);
    for (auto& r : cd) r.erase(r.begin() + bj);
  }
  Phylogeny tree = clusters[0].fragment;

  // Stretch ages into the admissible windows, bottom up. Each node sits a
  // deterministic fraction of the way into its window, jittered so ages stay
  // distinct.
  auto bounds = node_age_bounds(tree, cals);
  for (int i : tree.postorder()) {
    if (tree.at(i).is_leaf()) continue;
    double child_max = 0;
    for (int c : tree.at(i).children) child_max = std::max(child_max, tree.at(c).age);
    double floor = std::max(bounds.lower[i], child_max);
    double width = bounds.upper[i] - floor;
    if (width < 0 || (width == 0 && floor <= child_max))
      throw InfeasibleError("no room for node " + std::to_string(i) + " during initialization");
    double frac = 0.18 + 0.1 * ((i * 2654435761u % 97) / 97.0);
    tree.at(i).age = floor + frac * width;
  }
  tree.canonicalize();

  ChainState state;
  state.tree = std::move(tree);
  state.params.mu = init_mu_guess(data, state.tree);
  state.params.kappa = 0.5;
  state.params.rho = std::sqrt(config.prior.rho_min * config.prior.rho_max);
  state.params.xi.assign(L, 0.5);
  if (data) {
    auto q = row_missing_counts(*data);
    for (int i = 0; i < L; ++i) {
      double frac = data->num_classes() > 0
                        ? 1.0 - static_cast<double>(q[i]) / data->num_classes()
                        : 1.0;
      state.params.xi[i] = std::clamp(frac, 1e-3, 1.0);
    }
  }
  return state;
}

// ---------------------------------------------------------------------------
// Sampler

Sampler::Sampler(const TraitMatrix* data, const RegistrationRule& rule, CalibrationSet cals,
                 ChainConfig config, std::optional<CalibrationSet> movability,
                 std::optional<ChainState> init)
    : rule_(rule),
      cals_(std::move(cals)),
      movability_(movability.value_or(cals_)),
      config_(std::move(config)),
      rng_(make_rng(config_.seed, 0xc4a1)) {
  if (data && !config_.prior_only) data_ = prepare_data(*data, rule_);
  if (init) {
    state_ = std::move(*init);
  } else {
    std::vector<std::string> labels;
    if (!data) throw std::runtime_error("sampler needs data or an explicit initial state");
    state_ = initial_state(data, rule_, cals_, config_, labels);
  }
  state_.log_post = target(state_.tree, state_.params);
  if (state_.log_post == -kInf)
    throw std::runtime_error("infeasible initial state: the starting point has zero posterior density");
}

double Sampler::target(const Phylogeny& tree, const ModelParams& params) const {
  if (!data_) return log_prior(tree, params, cals_, config_.prior);
  return log_posterior_prepared(tree, params, *data_, rule_, cals_, config_.prior);
}

MoveKind Sampler::pick_move() {
  double total = 0;
  for (int k = 0; k < static_cast<int>(MoveKind::count); ++k)
    total += config_.weights.of(static_cast<MoveKind>(k));
  double u = uniform(rng_, 0.0, total);
  for (int k = 0; k < static_cast<int>(MoveKind::count); ++k) {
    u -= config_.weights.of(static_cast<MoveKind>(k));
    if (u <= 0) return static_cast<MoveKind>(k);
  }
  return MoveKind::age_slide;
}

namespace {

// Local admissible window for one node's age given everything else fixed:
// children and parent, the root cap, and any calibration attached to the node.
struct AgeWindow {
  double lo = 0, hi = 0;
};

AgeWindow local_age_window(const Phylogeny& tree, const CalibrationSet& cals, int node) {
  AgeWindow w;
  w.hi = node == tree.root() ? cals.root_cap : tree.at(tree.at(node).parent).age;
  w.lo = 0.0;
  if (!tree.at(node).is_leaf())
    for (int c : tree.at(node).children) w.lo = std::max(w.lo, tree.at(c).age);
  for (const auto& c : cals.constraints) {
    bool applies = false;
    if (c.kind == Calibration::Kind::leaf_age) {
      applies = tree.at(node).is_leaf() && tree.at(node).label == c.leaves.at(0);
    } else if (!tree.at(node).is_leaf()) {
      std::uint64_t want = 0;
      for (const auto& l : c.leaves) {
        int idx = tree.leaf_index(l);
        if (idx < 0) return {1, 0};
        want |= 1ull << idx;
      }
      applies = tree.leaf_mask(node) == want;
    }
    if (!applies) continue;
    if (c.min_age) w.lo = std::max(w.lo, *c.min_age);
    if (c.max_age) w.hi = std::min(w.hi, *c.max_age);
  }
  return w;
}

std::vector<int> movable_nodes(const Phylogeny& tree, const CalibrationSet& movability) {
  auto mask = movable_ages(tree, movability);
  std::vector<int> out;
  for (int i = 0; i < tree.num_nodes(); ++i)
    if (mask[i]) out.push_back(i);
  return out;
}

}  // namespace

std::vector<int> catastrophe_shift_neighbours(const Phylogeny& tree, int i) {
  std::vector<int> out;
  if (!tree.at(i).is_leaf()) {
    out.push_back(tree.at(i).children[0]);
    out.push_back(tree.at(i).children[1]);
  }
  out.push_back(tree.sibling(i));
  const int j = tree.at(i).parent;
  if (j != tree.root()) out.push_back(j);
  return out;
}

bool Sampler::propose_age_slide(Phylogeny& tree, double& log_hastings) {
  auto nodes = movable_nodes(tree, movability_);
  if (nodes.empty()) return false;
  int node = nodes[uniform_int(rng_, 0, static_cast<int>(nodes.size()) - 1)];
  auto w = local_age_window(tree, cals_, node);
  if (!(w.hi > w.lo)) return false;
  double t = uniform(rng_, w.lo, w.hi);
  if (t == w.lo || t == tree.at(node).age) return false;
  tree.at(node).age = t;
  log_hastings = 0.0;  // the window does not depend on the moved age
  return true;
}

bool Sampler::propose_spr(Phylogeny& tree, double& log_hastings) {
  const int n = tree.num_nodes();
  if (tree.num_leaves() < 2) return false;
  // X: any non-root node
  int x;
  do {
    x = uniform_int(rng_, 0, n - 1);
  } while (x == tree.root());
  const int p = tree.at(x).parent;
  const int s = tree.sibling(x);
  const int g = tree.at(p).parent;  // -1 when p is the root
  const double t_x = tree.at(x).age;

  // The vanishing edge must carry no catastrophes, or the reverse move could
  // not rebuild the state.
  if (g >= 0 && tree.at(p).n_cats > 0) return false;
  if (g < 0 && tree.at(s).n_cats > 0) return false;

  // Reverse-move window at the current attachment.
  const double w_old = (g >= 0 ? tree.at(g).age : cals_.root_cap) - std::max(t_x, tree.at(s).age);
  if (!(w_old > 0)) return false;

  // Detach: s takes p's place.
  if (g >= 0) {
    auto& gc = tree.at(g).children;
    gc[gc[0] == p ? 0 : 1] = s;
    tree.at(s).parent = g;
    tree.at(s).n_cats += tree.at(p).n_cats;
  } else {
    tree.at(s).parent = -1;
    tree.at(s).n_cats = 0;
  }
  const int remainder_root = g >= 0 ? tree.root() : s;

  // Attachment candidates in the remainder: finite edges with room above
  // max(t_x, child age), plus the root edge.
  std::vector<int> in_remainder;
  {
    std::vector<int> stack{remainder_root};
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      in_remainder.push_back(v);
      if (!tree.at(v).is_leaf()) {
        stack.push_back(tree.at(v).children[0]);
        stack.push_back(tree.at(v).children[1]);
      }
    }
  }
  struct Candidate {
    int child;  // -1 for the root edge
    double lo, hi;
  };
  std::vector<Candidate> cands;
  for (int v : in_remainder) {
    if (v == remainder_root) continue;
    double lo = std::max(t_x, tree.at(v).age);
    double hi = tree.at(tree.at(v).parent).age;
    if (hi > lo) cands.push_back({v, lo, hi});
  }
  {
    double lo = std::max(t_x, tree.at(remainder_root).age);
    if (cals_.root_cap > lo) cands.push_back({-1, lo, cals_.root_cap});
  }
  if (cands.empty()) return false;
  const auto& c = cands[uniform_int(rng_, 0, static_cast<int>(cands.size()) - 1)];
  const double h = uniform(rng_, c.lo, c.hi);
  const double w_new = c.hi - c.lo;
  if (h == c.lo) return false;

  // Reattach p above the chosen child (or above the whole remainder).
  tree.at(p).age = h;
  tree.at(p).n_cats = 0;
  if (c.child >= 0) {
    const int gp = tree.at(c.child).parent;
    auto& gc = tree.at(gp).children;
    gc[gc[0] == c.child ? 0 : 1] = p;
    tree.at(p).parent = gp;
    tree.at(p).children = {x, c.child};
    tree.at(c.child).parent = p;
  } else {
    tree.at(p).parent = -1;
    tree.at(p).children = {x, remainder_root};
    tree.at(remainder_root).parent = p;
    tree.at(remainder_root).n_cats = 0;
  }
  tree.at(x).parent = p;

  log_hastings = std::log(w_new) - std::log(w_old);
  return true;
}

bool Sampler::propose_cat_shift(Phylogeny& tree, double& log_hastings) {
  const int k_total = tree.total_catastrophes();
  if (k_total < 1) return false;
  // source edge with probability k_i / k_T
  int source = -1;
  {
    int u = uniform_int(rng_, 1, k_total);
    for (int i = 0; i < tree.num_nodes(); ++i) {
      if (i == tree.root()) continue;
      u -= tree.at(i).n_cats;
      if (u <= 0) {
        source = i;
        break;
      }
    }
  }
  auto nbrs = catastrophe_shift_neighbours(tree, source);
  const int q_source = static_cast<int>(nbrs.size());
  const int target_edge = nbrs[uniform_int(rng_, 0, q_source - 1)];
  const int q_target = static_cast<int>(catastrophe_shift_neighbours(tree, target_edge).size());

  const int k_source = tree.at(source).n_cats;
  tree.at(source).n_cats -= 1;
  tree.at(target_edge).n_cats += 1;
  const int k_target_after = tree.at(target_edge).n_cats;

  log_hastings = std::log(static_cast<double>(q_source) * k_target_after) -
                 std::log(static_cast<double>(q_target) * k_source);
  return true;
}

bool Sampler::propose_cat_birth_death(Phylogeny& tree, double& log_hastings) {
  const int n_edges = tree.num_nodes() - 1;  // finite edges
  const int k_total = tree.total_catastrophes();
  if (uniform01(rng_) < 0.5) {
    // add
    int e = uniform_int(rng_, 0, tree.num_nodes() - 1);
    while (e == tree.root()) e = uniform_int(rng_, 0, tree.num_nodes() - 1);
    tree.at(e).n_cats += 1;
    log_hastings = std::log(static_cast<double>(tree.at(e).n_cats) * n_edges / (k_total + 1));
  } else {
    if (k_total < 1) return false;
    int u = uniform_int(rng_, 1, k_total);
    int e = -1;
    for (int i = 0; i < tree.num_nodes(); ++i) {
      if (i == tree.root()) continue;
      u -= tree.at(i).n_cats;
      if (u <= 0) {
        e = i;
        break;
      }
    }
    const int k_e = tree.at(e).n_cats;
    tree.at(e).n_cats -= 1;
    log_hastings = std::log(static_cast<double>(k_total) / (static_cast<double>(k_e) * n_edges));
  }
  return true;
}

bool Sampler::propose_scale(Phylogeny& tree, ModelParams& params, double& log_hastings) {
  const double z = uniform(rng_, -config_.scales.scale_log_step, config_.scales.scale_log_step);
  const double s = std::exp(z);
  auto mask = movable_ages(tree, movability_);
  int n_scaled = 0;
  for (int i = 0; i < tree.num_nodes(); ++i)
    if (mask[i]) {
      tree.at(i).age *= s;
      ++n_scaled;
    }
  params.mu /= s;
  params.rho /= s;
  log_hastings = (n_scaled - 2) * z;
  return true;
}

bool Sampler::propose_scalar(MoveKind kind, ModelParams& params, double& log_hastings) {
  switch (kind) {
    case MoveKind::mu_walk: {
      const double z = uniform(rng_, -config_.scales.mu_log_step, config_.scales.mu_log_step);
      params.mu *= std::exp(z);
      log_hastings = z;
      return true;
    }
    case MoveKind::rho_walk: {
      const double z = uniform(rng_, -config_.scales.rho_log_step, config_.scales.rho_log_step);
      params.rho *= std::exp(z);
      log_hastings = z;
      return true;
    }
    case MoveKind::kappa_walk: {
      double k = params.kappa + uniform(rng_, -config_.scales.kappa_step, config_.scales.kappa_step);
      for (int guard = 0; (k < 0 || k > 1) && guard < 8; ++guard) {
        if (k < 0) k = -k;
        if (k > 1) k = 2 - k;
      }
      if (k >= 1 || k < 0) return false;
      params.kappa = k;
      log_hastings = 0.0;
      return true;
    }
    case MoveKind::xi_walk: {
      const int i = uniform_int(rng_, 0, static_cast<int>(params.xi.size()) - 1);
      const double z = uniform(rng_, -config_.scales.xi_log_step, config_.scales.xi_log_step);
      const double xi_new = 1.0 - std::exp(z) * (1.0 - params.xi[i]);
      if (xi_new <= 0.0) return false;
      params.xi[i] = xi_new;
      log_hastings = z;  // multiplicative walk on 1 - xi
      return true;
    }
    default: return false;
  }
}

void Sampler::step() {
  const MoveKind kind = pick_move();
  auto& st = stats_[static_cast<int>(kind)];

  Phylogeny cand_tree = state_.tree;
  ModelParams cand_params = state_.params;
  double log_hastings = 0.0;
  bool ok = false;
  bool tree_changed = false;
  switch (kind) {
    case MoveKind::age_slide:
      ok = propose_age_slide(cand_tree, log_hastings);
      tree_changed = true;
      break;
    case MoveKind::spr:
      ok = propose_spr(cand_tree, log_hastings);
      tree_changed = true;
      break;
    case MoveKind::cat_shift:
      ok = propose_cat_shift(cand_tree, log_hastings);
      break;
    case MoveKind::cat_birth_death:
      ok = propose_cat_birth_death(cand_tree, log_hastings);
      break;
    case MoveKind::scale:
      ok = propose_scale(cand_tree, cand_params, log_hastings);
      tree_changed = true;
      break;
    default:
      ok = propose_scalar(kind, cand_params, log_hastings);
      break;
  }

  state_.iteration += 1;
  if (!ok) {
    st.skipped += 1;  // a self-loop: the chain stays put by construction
  } else {
    st.proposed += 1;
    if (tree_changed) cand_tree.canonicalize();
    const double cand_target = target(cand_tree, cand_params);
    const double log_alpha = cand_target - state_.log_post + log_hastings;
    if (log_alpha >= 0 || std::log(uniform01(rng_)) < log_alpha) {
      state_.tree = std::move(cand_tree);
      state_.params = std::move(cand_params);
      state_.log_post = cand_target;
      st.accepted += 1;
    }
  }

  if (config_.recheck_interval > 0 && state_.iteration % config_.recheck_interval == 0) {
    const double fresh = target(state_.tree, state_.params);
    if (std::abs(fresh - state_.log_post) > 1e-8)
      throw std::logic_error("cached log posterior drifted from a fresh evaluation");
    state_.log_post = fresh;
  }
}

ChainTrace Sampler::run() {
  ChainTrace trace;
  const long expected = config_.iterations / config_.thin + 1;
  trace.rows.reserve(expected);
  trace.trees.reserve(expected);
  for (long i = 0; i < config_.iterations; ++i) {
    step();
    if (state_.iteration > config_.burn_in && state_.iteration % config_.thin == 0) {
      TraceRow r;
      r.iteration = state_.iteration;
      r.log_post = state_.log_post;
      r.mu = state_.params.mu;
      r.kappa = state_.params.kappa;
      r.rho = state_.params.rho;
      r.root_age = state_.tree.at(state_.tree.root()).age;
      r.k_total = state_.tree.total_catastrophes();
      r.xi = state_.params.xi;
      trace.rows.push_back(std::move(r));
      trace.trees.push_back(state_.tree);
    }
  }
  trace.stats = stats_;
  return trace;
}

ChainTrace run_chain(const TraitMatrix* data, const RegistrationRule& rule, const CalibrationSet& cals,
                     const ChainConfig& config, const std::vector<std::string>& labels) {
  std::optional<ChainState> init;
  if (!data) {
    init = initial_state(nullptr, rule, cals, config, labels);
  }
  Sampler sampler(data, rule, cals, config, std::nullopt, std::move(init));
  return sampler.run();
}

}  // namespace dollocat
