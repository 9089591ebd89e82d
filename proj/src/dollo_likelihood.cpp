#include "dollocat/dollo_likelihood.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace dollocat {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kNever = std::numeric_limits<int>::max();

double clamp01(double x) { return std::min(1.0, std::max(0.0, x)); }

// Survival probabilities from `top` to each descendant leaf, and the product
// over all subtree edges. delta[c] is the survival on the edge above c.
struct SubtreeSurvival {
  std::vector<int> leaves;          // subtree leaves of `top`
  std::vector<double> to_leaf;      // aligned with `leaves`
  double all_edges = 1.0;           // product of delta over every subtree edge
};

SubtreeSurvival subtree_survival(const Phylogeny& tree, const std::vector<double>& delta, int top) {
  SubtreeSurvival out;
  std::vector<std::pair<int, double>> stack{{top, 1.0}};
  while (!stack.empty()) {
    auto [node, surv] = stack.back();
    stack.pop_back();
    if (node != top) out.all_edges *= delta[node];
    if (tree.at(node).is_leaf()) {
      out.leaves.push_back(node);
      out.to_leaf.push_back(surv);
    } else {
      for (int c : tree.at(node).children) stack.emplace_back(c, surv * delta[c]);
    }
  }
  return out;
}

// "product over all entries except one", computed without division.
std::vector<double> product_except_self(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<double> out(n, 1.0);
  double acc = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = acc;
    acc *= v[i];
  }
  acc = 1.0;
  for (std::size_t i = n; i-- > 0;) {
    out[i] *= acc;
    acc *= v[i];
  }
  return out;
}

std::vector<double> edge_survivals(const Phylogeny& tree, const ModelParams& params) {
  std::vector<double> delta(tree.num_nodes(), 0.0);
  for (int i = 0; i < tree.num_nodes(); ++i)
    if (i != tree.root()) delta[i] = effective_survival(tree, params, i);
  return delta;
}

}  // namespace

double catastrophe_virtual_time(double mu, double kappa) {
  if (mu <= 0) throw std::runtime_error("catastrophe_virtual_time: mu must be positive");
  if (kappa < 0 || kappa >= 1)
    throw std::runtime_error("catastrophe_virtual_time: kappa must lie in [0,1)");
  return -std::log1p(-kappa) / mu;
}

double effective_survival(const Phylogeny& tree, const ModelParams& params, int child) {
  if (child == tree.root()) return 0.0;
  double dt = tree.edge_length(child);
  if (tree.at(child).n_cats > 0) dt += tree.at(child).n_cats * catastrophe_virtual_time(params.mu, params.kappa);
  double delta = std::exp(-params.mu * dt);
  return std::max(delta, DBL_MIN);  // keeps log-domain arithmetic finite downstream
}

std::vector<NodeProfile> compute_profiles(const Phylogeny& tree, const ModelParams& params) {
  const auto delta = edge_survivals(tree, params);
  std::vector<NodeProfile> prof(tree.num_nodes());
  for (int i : tree.postorder()) {
    NodeProfile& p = prof[i];
    const auto& node = tree.at(i);
    if (node.is_leaf()) {
      const double xi = params.xi.at(i);
      p.n_leaves = 1;
      p.u0 = p.us1 = 1.0 - xi;
      p.u1 = p.us = xi;
      p.v0 = p.vs1 = 0.0;
      p.vs = 1.0;
      p.mask_all = 1.0 - xi;
      p.mask_one_vis = xi;
      p.xi_all = xi;
      p.extinct = 0.0;
      p.all_survive = 1.0;
      continue;
    }
    const int c1 = node.children[0], c2 = node.children[1];
    const NodeProfile& a = prof[c1];
    const NodeProfile& b = prof[c2];
    const double d1 = delta[c1], d2 = delta[c2];
    p.n_leaves = a.n_leaves + b.n_leaves;

    p.u0 = ((1 - d1) + d1 * a.u0) * ((1 - d2) + d2 * b.u0);
    p.u1 = d1 * (1 - d2) * a.u1 + d2 * (1 - d1) * b.u1 + d1 * d2 * (a.u1 * b.u0 + a.u0 * b.u1);
    p.us = d1 * a.us * d2 * b.us;
    p.us1 = (d1 * a.us1 + (a.n_leaves == 1 ? (1 - d1) : 0.0)) * d2 * b.us +
            d1 * a.us * (d2 * b.us1 + (b.n_leaves == 1 ? (1 - d2) : 0.0));

    p.v0 = (d1 * a.v0 + (1 - d1) * a.xi_all) * (d2 * b.v0 + (1 - d2) * b.xi_all);
    p.vs = (d1 * a.vs + (1 - d1) * a.mask_all) * (d2 * b.vs + (1 - d2) * b.mask_all);
    p.vs1 = (d1 * a.vs1 + (1 - d1) * a.mask_one_vis) * (d2 * b.vs + (1 - d2) * b.mask_all) +
            (d1 * a.vs + (1 - d1) * a.mask_all) * (d2 * b.vs1 + (1 - d2) * b.mask_one_vis);

    p.mask_all = a.mask_all * b.mask_all;
    p.mask_one_vis = a.mask_one_vis * b.mask_all + a.mask_all * b.mask_one_vis;
    p.xi_all = a.xi_all * b.xi_all;
    p.extinct = ((1 - d1) + d1 * a.extinct) * ((1 - d2) + d2 * b.extinct);
    p.all_survive = d1 * a.all_survive * d2 * b.all_survive;
  }
  return prof;
}

namespace {

// Masking aggregates over the leaves *outside* the subtree of `node`:
// mask_all and mask_one_vis of the complement, assembled from the sibling
// subtrees along the root path.
struct OutsideMask {
  double all = 1.0;      // every outside leaf unobserved
  double one_vis = 0.0;  // exactly one outside leaf observed
};

OutsideMask outside_mask(const Phylogeny& tree, const std::vector<NodeProfile>& prof, int node) {
  OutsideMask out;
  for (int n = node; n != tree.root(); n = tree.at(n).parent) {
    const NodeProfile& sib = prof[tree.sibling(n)];
    out.one_vis = out.one_vis * sib.mask_all + out.all * sib.mask_one_vis;
    out.all *= sib.mask_all;
  }
  return out;
}

// P[class born at `top` reaches leaf l but not leaf l2], both in the subtree.
double survive_one_not_other(const Phylogeny& tree, const std::vector<double>& delta, int top,
                             int l, int l2, double surv_l) {
  if (surv_l <= 0) return 0.0;
  // Survival from the two leaves' LCA down to l2.
  std::vector<char> on_path(tree.num_nodes(), 0);
  for (int n = l; n != top; n = tree.at(n).parent) on_path[n] = 1;
  on_path[top] = 1;
  double down = 1.0;
  int n = l2;
  while (!on_path[n]) {
    down *= delta[n];
    n = tree.at(n).parent;
  }
  return surv_l * (1.0 - down);
}

}  // namespace

double registration_prob(const Phylogeny& tree, const ModelParams& params,
                         const std::vector<NodeProfile>& profiles, const RegistrationRule& rule,
                         int node) {
  if (!rule.has(1)) throw std::runtime_error("registration_prob: rule must include condition 1");
  const int L = tree.num_leaves();
  const NodeProfile& p = profiles[node];
  const int s = p.n_leaves;

  const int y_min = rule.has(2) ? 2 : 1;
  const int y_hi = rule.has(4) ? L - 1 : (rule.has(3) ? L : kNever);  // discard Y >= y_hi
  const int q_hi = rule.has(6) ? L - 1 : (rule.has(5) ? L : kNever);  // discard Y+Q >= q_hi

  const double prob_y_L = (s == L) ? p.us : 0.0;
  const double prob_y_L1 = (s == L) ? p.us1 : (s == L - 1 ? p.us : 0.0);

  double b1 = p.u0 + (y_min == 2 ? p.u1 : 0.0);
  double b2 = 0.0;
  if (y_hi <= L) b2 += prob_y_L;
  if (y_hi <= L - 1) b2 += prob_y_L1;

  OutsideMask out;
  double b3 = 0.0;
  if (q_hi != kNever) {
    out = outside_mask(tree, profiles, node);
    if (q_hi <= L) b3 += p.vs * out.all;
    if (q_hi <= L - 1) b3 += p.vs1 * out.all + p.vs * out.one_vis;
  }

  double b12 = 0.0;
  if (y_hi <= y_min - 1) b12 = p.u1;  // only reachable as {Y=1} when L=2

  // Joint low-Y / high-(Y+Q) events need per-leaf survival within the subtree.
  double b13 = 0.0, b123 = 0.0;
  if (q_hi != kNever) {
    const auto delta = edge_survivals(tree, params);
    const auto sub = subtree_survival(tree, delta, node);
    std::vector<double> one_minus_xi(sub.leaves.size());
    for (std::size_t k = 0; k < sub.leaves.size(); ++k) one_minus_xi[k] = 1.0 - params.xi[sub.leaves[k]];
    const auto rest_masked = product_except_self(one_minus_xi);

    const double t_00_L = p.mask_all * out.all;  // every leaf unobserved
    double t_00_L1 = p.mask_all * out.one_vis;
    double t_01_L = 0.0, t_01_L1 = 0.0;
    for (std::size_t k = 0; k < sub.leaves.size(); ++k) {
      const int l = sub.leaves[k];
      const double xi_l = params.xi[l];
      t_00_L1 += xi_l * (1.0 - sub.to_leaf[k]) * rest_masked[k] * out.all;
      t_01_L += xi_l * sub.to_leaf[k] * rest_masked[k] * out.all;
      if (y_min == 2) {
        t_01_L1 += xi_l * sub.to_leaf[k] * rest_masked[k] * out.one_vis;
        for (std::size_t k2 = 0; k2 < sub.leaves.size(); ++k2) {
          if (k2 == k) continue;
          const int l2 = sub.leaves[k2];
          double pair_rest = rest_masked[k] / std::max(one_minus_xi[k2], DBL_MIN);
          if (one_minus_xi[k2] <= DBL_MIN) {
            // recompute without division when xi_l2 == 1
            pair_rest = 1.0;
            for (std::size_t k3 = 0; k3 < sub.leaves.size(); ++k3)
              if (k3 != k && k3 != k2) pair_rest *= one_minus_xi[k3];
          }
          t_01_L1 += xi_l * params.xi[l2] *
                     survive_one_not_other(tree, delta, node, l, l2, sub.to_leaf[k]) * pair_rest * out.all;
        }
      }
    }
    if (q_hi <= L) b13 += t_00_L;
    if (q_hi <= L - 1) b13 += t_00_L1;
    if (y_min == 2) {
      if (q_hi <= L) b13 += t_01_L;
      if (q_hi <= L - 1) b13 += t_01_L1;
      if (y_hi <= 1) {  // triple intersection, only reachable when L=2
        if (q_hi <= L) b123 += t_01_L;
        if (q_hi <= L - 1) b123 += t_01_L1;
      }
    }
  }

  double b23 = 0.0;
  if (y_hi != kNever && q_hi != kNever) {
    if (s == L) {
      const auto delta = edge_survivals(tree, params);
      const auto sub = subtree_survival(tree, delta, node);
      const double t_LL = p.us;
      double t_L1_L = 0.0, t_L1_L1 = 0.0;
      std::vector<double> xi(sub.leaves.size());
      for (std::size_t k = 0; k < sub.leaves.size(); ++k) xi[k] = params.xi[sub.leaves[k]];
      const auto rest_visible = product_except_self(xi);
      for (std::size_t k = 0; k < sub.leaves.size(); ++k) {
        const int l = sub.leaves[k];
        // product of delta over subtree edges, the pendant edge of l excluded
        double all_but_one = 1.0;
        std::vector<int> stack{node};
        while (!stack.empty()) {
          int nn = stack.back();
          stack.pop_back();
          if (nn != node && nn != l) all_but_one *= delta[nn];
          if (!tree.at(nn).is_leaf()) {
            stack.push_back(tree.at(nn).children[0]);
            stack.push_back(tree.at(nn).children[1]);
          }
        }
        t_L1_L += (1.0 - xi[k]) * all_but_one * rest_visible[k];
        t_L1_L1 += xi[k] * all_but_one * (1.0 - delta[l]) * rest_visible[k];
      }
      if (y_hi <= L && q_hi <= L) b23 += t_LL;
      if (y_hi <= L - 1) {
        if (q_hi <= L) b23 += t_L1_L;
        if (q_hi <= L - 1) b23 += t_L1_L1;
      }
    } else if (s == L - 1 && y_hi <= L - 1) {
      // The single outside leaf is unobserved (counts toward Y+Q=L) or shows a
      // visible absence (Y+Q=L-1).
      int out_leaf = -1;
      std::uint64_t inside = tree.leaf_mask(node);
      for (int l = 0; l < L; ++l)
        if (!((inside >> l) & 1ull)) out_leaf = l;
      const double xi_out = params.xi[out_leaf];
      if (q_hi <= L) b23 += p.us * (1.0 - xi_out);
      if (q_hi <= L - 1) b23 += p.us * xi_out;
    }
  }

  return clamp01(1.0 - b1 - b2 - b3 + b12 + b13 + b23 - b123);
}

double normalizer_X(const Phylogeny& tree, const ModelParams& params, const RegistrationRule& rule) {
  const auto prof = compute_profiles(tree, params);
  double sum = 0.0;
  for (int i = 0; i < tree.num_nodes(); ++i) {
    const double pe = registration_prob(tree, params, prof, rule, i);
    const double one_minus_delta = (i == tree.root()) ? 1.0 : 1.0 - effective_survival(tree, params, i);
    sum += pe * one_minus_delta;
  }
  return sum / params.mu;
}

namespace {

// Per-column pruning with shared buffers: value[i] is the probability sum over
// the class completions consistent with the data below i, for a class alive
// at i; the birth-placement sum then walks from the presents' MRCA to the root.
struct ColumnEvaluator {
  const Phylogeny& tree;
  double mu;
  std::vector<int> order;  // postorder
  std::vector<double> delta;
  std::vector<double> value;
  std::vector<int> present_below;

  ColumnEvaluator(const Phylogeny& t, const ModelParams& params)
      : tree(t), mu(params.mu), order(t.postorder()), delta(edge_survivals(t, params)),
        value(t.num_nodes()), present_below(t.num_nodes()) {}

  double tau(std::span<const TraitState> column) {
    int total_present = 0;
    for (int i : order) {
      const auto& node = tree.at(i);
      if (node.is_leaf()) {
        value[i] = column[i] == TraitState::absent ? 0.0 : 1.0;
        present_below[i] = column[i] == TraitState::present ? 1 : 0;
        total_present += present_below[i];
        continue;
      }
      double v = 1.0;
      int np = 0;
      for (int c : node.children) {
        // Survive the child edge and explain the data below, or die on it;
        // a dead branch explains the data iff no visible present lies below.
        const double carried = delta[c] * value[c];
        v *= present_below[c] ? carried : (1.0 - delta[c]) + carried;
        np += present_below[c];
      }
      value[i] = v;
      present_below[i] = np;
    }
    if (total_present == 0)
      throw std::runtime_error("trait_term: column has no visible present entry");
    int mrca = -1;
    for (int i : order)
      if (present_below[i] == total_present) {
        mrca = i;
        break;
      }
    double sum = 0.0;
    for (int i = mrca;; i = tree.at(i).parent) {
      sum += value[i] * ((i == tree.root()) ? 1.0 : 1.0 - delta[i]);
      if (i == tree.root()) break;
    }
    return sum / mu;
  }
};

}  // namespace

double trait_term(const Phylogeny& tree, const ModelParams& params, std::span<const TraitState> column) {
  if (static_cast<int>(column.size()) != tree.num_leaves())
    throw std::runtime_error("trait_term: column size does not match the leaf count");
  ColumnEvaluator eval(tree, params);
  return eval.tau(column);
}

std::vector<ColumnPattern> dedupe_columns(const TraitMatrix& data) {
  std::map<std::vector<TraitState>, int> counts;
  for (int a = 0; a < data.num_classes(); ++a) {
    auto col = data.column(a);
    counts[std::vector<TraitState>(col.begin(), col.end())] += 1;
  }
  std::vector<ColumnPattern> out;
  out.reserve(counts.size());
  for (auto& [states, count] : counts) out.push_back({states, count});
  return out;
}

LikelihoodParts compute_likelihood_parts(const Phylogeny& tree, const ModelParams& params,
                                         const TraitMatrix& data, const RegistrationRule& rule) {
  LikelihoodParts parts;
  parts.X = normalizer_X(tree, params, rule);
  const auto patterns = dedupe_columns(data);
  parts.tau.reserve(patterns.size());
  parts.multiplicity.reserve(patterns.size());
  for (const auto& pat : patterns) {
    parts.tau.push_back(trait_term(tree, params, pat.states));
    parts.multiplicity.push_back(pat.count);
  }
  parts.n_columns = data.num_classes();
  const auto q = row_missing_counts(data);
  parts.log_mask = 0.0;
  for (int i = 0; i < data.num_languages(); ++i) {
    const double xi = params.xi.at(i);
    const int visible = data.num_classes() - q[i];
    if (q[i] > 0) parts.log_mask += q[i] * std::log1p(-xi);  // -inf when xi == 1
    if (visible > 0) parts.log_mask += visible * std::log(xi);
  }
  return parts;
}

double log_likelihood(const Phylogeny& tree, const ModelParams& params, const TraitMatrix& data,
                      const RegistrationRule& rule, double lambda) {
  const auto parts = compute_likelihood_parts(tree, params, data, rule);
  double ll = -lambda * parts.X + parts.n_columns * std::log(lambda) + parts.log_mask;
  for (std::size_t a = 0; a < parts.tau.size(); ++a) {
    if (parts.tau[a] <= 0) return -kInf;
    ll += parts.multiplicity[a] * std::log(parts.tau[a]);
  }
  return ll;
}

void validate_params(const ModelParams& params, int num_leaves) {
  if (!(params.mu > 0)) throw std::runtime_error("model params: mu must be positive");
  if (params.kappa < 0 || params.kappa >= 1) throw std::runtime_error("model params: kappa must lie in [0,1)");
  if (!(params.rho > 0)) throw std::runtime_error("model params: rho must be positive");
  if (static_cast<int>(params.xi.size()) != num_leaves)
    throw std::runtime_error("model params: xi must have one entry per language");
  for (double x : params.xi)
    if (!(x > 0) || x > 1) throw std::runtime_error("model params: xi entries must lie in (0,1]");
  if (params.lambda && *params.lambda < 0) throw std::runtime_error("model params: lambda must be non-negative");
}

namespace {

double log_poisson_pmf(int k, double mean) {
  return k * std::log(mean) - mean - std::lgamma(k + 1.0);
}

double catastrophe_log_prior(const Phylogeny& tree, double rho) {
  double lp = 0.0;
  for (int i = 0; i < tree.num_nodes(); ++i) {
    if (i == tree.root()) continue;
    lp += log_poisson_pmf(tree.at(i).n_cats, rho * tree.edge_length(i));
  }
  return lp;
}

bool params_in_support(const ModelParams& params, const PriorConfig& prior, int num_leaves) {
  if (!(params.mu > 0)) return false;
  if (params.kappa < 0 || params.kappa >= 1) return false;
  if (params.rho < prior.rho_min || params.rho > prior.rho_max) return false;
  if (static_cast<int>(params.xi.size()) != num_leaves) return false;
  for (double x : params.xi)
    if (!(x > 0) || x > 1) return false;
  return true;
}

}  // namespace

double log_prior(const Phylogeny& tree, const ModelParams& params, const CalibrationSet& cals,
                 const PriorConfig& prior) {
  if (!params_in_support(params, prior, tree.num_leaves())) return -kInf;
  double fg = prior_log_density(tree, cals);
  if (fg == -kInf) return -kInf;
  return fg + catastrophe_log_prior(tree, params.rho) - std::log(params.mu) - std::log(params.rho);
}

PreparedData prepare_data(const TraitMatrix& data, const RegistrationRule& rule) {
  if (!check_registration_consistency(data, rule).empty())
    throw std::runtime_error("data are inconsistent with registration rule " + rule.to_string());
  PreparedData out;
  out.patterns = dedupe_columns(data);
  out.row_unknowns = row_missing_counts(data);
  out.n_columns = data.num_classes();
  out.n_languages = data.num_languages();
  return out;
}

double log_posterior_prepared(const Phylogeny& tree, const ModelParams& params, const PreparedData& data,
                              const RegistrationRule& rule, const CalibrationSet& cals,
                              const PriorConfig& prior) {
  if (data.n_languages != tree.num_leaves())
    throw std::runtime_error("log_posterior: data rows do not match the tree leaves");
  const double lp = log_prior(tree, params, cals, prior);
  if (lp == -kInf) return -kInf;

  const double X = normalizer_X(tree, params, rule);
  if (!(X > 0)) return -kInf;  // registration impossible, yet columns were observed
  const int n = data.n_columns;
  double ll = std::lgamma(static_cast<double>(n)) - n * std::log(X);
  ColumnEvaluator eval(tree, params);
  for (const auto& pat : data.patterns) {
    const double tau = eval.tau(pat.states);
    if (tau <= 0) return -kInf;
    ll += pat.count * std::log(tau);
  }
  for (int i = 0; i < data.n_languages; ++i) {
    const double xi = params.xi[i];
    const int q = data.row_unknowns[i];
    if (q > 0) {
      if (xi >= 1.0) return -kInf;
      ll += q * std::log1p(-xi);
    }
    if (n - q > 0) ll += (n - q) * std::log(xi);
  }
  return ll + lp;
}

double log_posterior(const Phylogeny& tree, const ModelParams& params, const TraitMatrix& data,
                     const RegistrationRule& rule, const CalibrationSet& cals, const PriorConfig& prior) {
  if (data.num_languages() != tree.num_leaves())
    throw std::runtime_error("log_posterior: data rows do not match the tree leaves");
  return log_posterior_prepared(tree, params, prepare_data(data, rule), rule, cals, prior);
}

}  // namespace dollocat
