#include "dollocat/analysis.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "dollocat/diagnostics.hpp"

namespace dollocat {

std::pair<double, double> hpd_interval(std::vector<double> values, double level) {
  if (values.size() < 2) throw std::runtime_error("hpd_interval: need at least two samples");
  if (level <= 0 || level > 1) throw std::runtime_error("hpd_interval: level must lie in (0,1]");
  std::sort(values.begin(), values.end());
  const int n = static_cast<int>(values.size());
  const int k = std::min<int>(n, static_cast<int>(std::ceil(level * n)));
  double best_lo = values.front(), best_hi = values.back();
  for (int i = 0; i + k - 1 < n; ++i) {
    const double lo = values[i], hi = values[i + k - 1];
    if (hi - lo < best_hi - best_lo) {
      best_lo = lo;
      best_hi = hi;
    }
  }
  return {best_lo, best_hi};
}

namespace {

std::string format_g(double x) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6g", x);
  return buf;
}

}  // namespace

ConsensusTree majority_consensus(std::span<const Phylogeny> samples) {
  if (samples.empty()) throw std::runtime_error("consensus: no samples");
  const int L = samples[0].num_leaves();
  std::vector<std::string> labels;
  for (int i = 0; i < L; ++i) labels.push_back(samples[0].at(i).label);
  for (const auto& t : samples) {
    if (t.num_leaves() != L) throw std::runtime_error("consensus: samples have different leaf sets");
    for (int i = 0; i < L; ++i)
      if (t.at(i).label != labels[i]) throw std::runtime_error("consensus: samples have different leaf sets");
  }

  // Each sample contributes each of its clades exactly once.
  struct CladeStats {
    long count = 0;
    double age_sum = 0;
    double cats_sum = 0;
  };
  std::map<std::uint64_t, CladeStats> clades;
  for (const auto& t : samples) {
    for (int i = 0; i < t.num_nodes(); ++i) {
      const std::uint64_t mask = t.leaf_mask(i);
      auto& cs = clades[mask];
      cs.count += 1;
      cs.age_sum += t.at(i).age;
      cs.cats_sum += i == t.root() ? 0 : t.at(i).n_cats;
    }
  }

  const double half = samples.size() / 2.0;
  struct Retained {
    std::uint64_t mask;
    CladeStats stats;
  };
  std::vector<Retained> retained;
  for (const auto& [mask, cs] : clades)
    if (cs.count > half) retained.push_back({mask, cs});
  // Large clades first so parents precede children during assembly.
  std::sort(retained.begin(), retained.end(), [](const Retained& a, const Retained& b) {
    int pa = std::popcount(a.mask), pb = std::popcount(b.mask);
    return pa != pb ? pa > pb : a.mask < b.mask;
  });

  ConsensusTree out;
  out.leaf_labels = labels;
  out.nodes.resize(L);
  for (int i = 0; i < L; ++i) {
    out.nodes[i].leaf = i;
    out.nodes[i].clade = 1ull << i;
    const auto& cs = clades[1ull << i];
    out.nodes[i].support = 1.0;
    out.nodes[i].mean_age = cs.age_sum / cs.count;
    out.nodes[i].mean_cats = cs.cats_sum / cs.count;
    out.nodes[i].display_cats = static_cast<int>(std::lround(out.nodes[i].mean_cats));
  }

  // Assemble by nesting: every retained non-leaf clade becomes a node whose
  // children are the largest retained clades strictly inside it.
  std::vector<int> node_of;  // aligned with `retained`
  for (const auto& r : retained) {
    if (std::popcount(r.mask) == 1) {
      node_of.push_back(static_cast<int>(std::countr_zero(r.mask)));
      continue;
    }
    ConsensusNode node;
    node.clade = r.mask;
    node.support = static_cast<double>(r.stats.count) / samples.size();
    node.mean_age = r.stats.age_sum / r.stats.count;
    node.mean_cats = r.stats.cats_sum / r.stats.count;
    node.display_cats = static_cast<int>(std::lround(node.mean_cats));
    out.nodes.push_back(node);
    node_of.push_back(static_cast<int>(out.nodes.size()) - 1);
  }
  // children: for each retained clade, attach to the smallest retained strict
  // superset
  for (std::size_t i = 0; i < retained.size(); ++i) {
    if (retained[i].mask == retained[0].mask) continue;  // the full set
    int best = -1;
    for (std::size_t j = 0; j < retained.size(); ++j) {
      if (i == j) continue;
      if ((retained[i].mask & retained[j].mask) != retained[i].mask) continue;
      if (retained[j].mask == retained[i].mask) continue;
      if (best < 0 || std::popcount(retained[j].mask) < std::popcount(retained[best].mask)) best = static_cast<int>(j);
    }
    if (best < 0) throw std::logic_error("consensus: clade with no parent");
    out.nodes[node_of[best]].children.push_back(node_of[i]);
  }
  out.root = node_of[0];
  for (auto& n : out.nodes) std::sort(n.children.begin(), n.children.end());
  return out;
}

namespace {

void consensus_newick(const ConsensusTree& t, int node, double label_below, std::string& s) {
  const auto& n = t.nodes[node];
  if (n.leaf >= 0) {
    s += t.leaf_labels[n.leaf];
  } else {
    s += '(';
    for (std::size_t i = 0; i < n.children.size(); ++i) {
      if (i) s += ',';
      consensus_newick(t, n.children[i], label_below, s);
    }
    s += ')';
  }
  s += "[&age=" + format_g(n.mean_age);
  if (n.display_cats > 0) s += ",k=" + std::to_string(n.display_cats);
  if (n.leaf < 0 && n.support < label_below) s += ",support=" + format_g(n.support);
  s += ']';
}

}  // namespace

std::string ConsensusTree::to_newick(double label_below) const {
  std::string s;
  consensus_newick(*this, root, label_below, s);
  s += ';';
  return s;
}

std::string ConsensusTree::support_table() const {
  std::ostringstream os;
  os << "clade\tsupport\tmean_age\tmean_cats\n";
  for (const auto& n : nodes) {
    if (n.leaf >= 0) continue;
    bool first = true;
    for (int i = 0; i < 64; ++i)
      if ((n.clade >> i) & 1ull) {
        os << (first ? "" : ",") << leaf_labels[i];
        first = false;
      }
    os << '\t' << format_g(n.support) << '\t' << format_g(n.mean_age) << '\t' << format_g(n.mean_cats)
       << '\n';
  }
  return os.str();
}

std::vector<SummaryRow> posterior_summary(const ChainTrace& trace) {
  if (trace.rows.empty()) throw std::runtime_error("posterior_summary: empty trace");
  std::vector<std::string> names{"mu", "kappa", "rho", "root_age", "k_total"};
  const int L = static_cast<int>(trace.rows.front().xi.size());
  for (int i = 1; i <= L; ++i) names.push_back("xi_" + std::to_string(i));

  std::vector<SummaryRow> out;
  for (const auto& name : names) {
    auto v = trace.column(name);
    SummaryRow row;
    row.name = name;
    double m = 0;
    for (double x : v) m += x;
    m /= v.size();
    double s2 = 0;
    for (double x : v) s2 += (x - m) * (x - m);
    row.mean = m;
    row.sd = v.size() > 1 ? std::sqrt(s2 / (v.size() - 1)) : 0.0;
    if (v.size() >= 2) {
      auto [lo, hi] = hpd_interval(v, 0.95);
      row.hpd_lo = lo;
      row.hpd_hi = hi;
    } else {
      row.hpd_lo = row.hpd_hi = m;
    }
    row.ess = effective_sample_size(v);
    out.push_back(row);
  }
  return out;
}

std::string summary_table(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  os << "parameter\tmean\tsd\thpd_lo\thpd_hi\tess\testimate\n";
  for (const auto& r : rows) {
    os << r.name << '\t' << format_g(r.mean) << '\t' << format_g(r.sd) << '\t' << format_g(r.hpd_lo) << '\t'
       << format_g(r.hpd_hi) << '\t' << format_g(r.ess) << '\t' << format_g(r.mean) << " +/- "
       << format_g(r.sd) << '\n';
  }
  return os.str();
}

std::string XvalReport::header() {
  return "constraint\tdescription\tbound_lo\tbound_hi\tfreed_hpd_lo\tfreed_hpd_hi\tp_posterior\tse_posterior"
         "\tp_prior\tse_prior\ttwo_log_B\tse_two_log_B\tkind\tstrong_conflict";
}

std::string XvalReport::to_line() const {
  std::ostringstream os;
  os << constraint << '\t' << description << '\t' << (bound_lo ? format_g(*bound_lo) : "-") << '\t'
     << (bound_hi ? format_g(*bound_hi) : "-") << '\t' << format_g(freed_age_hpd_lo) << '\t'
     << format_g(freed_age_hpd_hi) << '\t' << format_g(p_posterior) << '\t' << format_g(se_posterior) << '\t'
     << format_g(p_prior) << '\t' << format_g(se_prior) << '\t' << format_g(two_log_bayes) << '\t'
     << format_g(se_two_log_bayes) << '\t'
     << (kind == Kind::exact ? "exact" : (kind == Kind::lower_bound ? ">=" : "<=")) << '\t'
     << (strong_conflict ? 1 : 0);
  return os.str();
}

namespace {

// Fraction of samples satisfying the constraint, with an autocorrelation-aware
// standard error.
struct FractionEstimate {
  double p = 0, se = 0, n_eff = 0;
};

FractionEstimate constraint_fraction(const std::vector<Phylogeny>& trees, const Calibration& c) {
  std::vector<double> indicator;
  indicator.reserve(trees.size());
  for (const auto& t : trees) indicator.push_back(satisfies(t, c) ? 1.0 : 0.0);
  FractionEstimate est;
  double sum = 0;
  for (double x : indicator) sum += x;
  est.p = sum / indicator.size();
  est.n_eff = effective_sample_size(indicator);
  est.se = std::sqrt(std::max(est.p * (1 - est.p), 0.0) / std::max(est.n_eff, 1.0));
  return est;
}

std::vector<double> freed_node_ages(const std::vector<Phylogeny>& trees, const Calibration& c) {
  std::vector<double> ages;
  ages.reserve(trees.size());
  for (const auto& t : trees) {
    if (c.kind == Calibration::Kind::leaf_age) {
      ages.push_back(t.at(t.leaf_index(c.leaves.at(0))).age);
    } else {
      std::vector<int> leaves;
      for (const auto& l : c.leaves) leaves.push_back(t.leaf_index(l));
      ages.push_back(t.at(t.mrca(leaves)).age);
    }
  }
  return ages;
}

}  // namespace

XvalReport bayes_factor_xval(const TraitMatrix& data, const RegistrationRule& rule,
                             const CalibrationSet& cals, int drop, const ChainConfig& config) {
  if (drop < 0 || drop >= static_cast<int>(cals.constraints.size()))
    throw std::runtime_error("xval: constraint index out of range");
  const Calibration dropped = cals.constraints[drop];
  CalibrationSet reduced = cals.without(drop);

  // Posterior chain on the enlarged space; leaf movability still follows the
  // full constraint set so a freed leaf keeps floating.
  ChainConfig post_cfg = config;
  Sampler post(&data, rule, reduced, post_cfg, cals);
  ChainTrace post_trace = post.run();

  ChainConfig prior_cfg = config;
  prior_cfg.prior_only = true;
  prior_cfg.seed = mix64(config.seed) + 1;
  Sampler prior(&data, rule, reduced, prior_cfg, cals,
                initial_state(&data, rule, reduced, prior_cfg, {}));
  ChainTrace prior_trace = prior.run();

  auto post_est = constraint_fraction(post_trace.trees, dropped);
  auto prior_est = constraint_fraction(prior_trace.trees, dropped);

  XvalReport rep;
  rep.constraint = drop;
  rep.description = dropped.describe();
  rep.bound_lo = dropped.min_age;
  rep.bound_hi = dropped.max_age;
  auto ages = freed_node_ages(post_trace.trees, dropped);
  auto [lo, hi] = hpd_interval(ages, 0.95);
  rep.freed_age_hpd_lo = lo;
  rep.freed_age_hpd_hi = hi;
  rep.p_posterior = post_est.p;
  rep.se_posterior = post_est.se;
  rep.p_prior = prior_est.p;
  rep.se_prior = prior_est.se;

  if (post_est.p <= 0 && prior_est.p <= 0) {
    rep.kind = XvalReport::Kind::exact;  // no information either way
    rep.two_log_bayes = 0;
    rep.se_two_log_bayes = std::numeric_limits<double>::infinity();
  } else if (post_est.p <= 0) {
    // the posterior never satisfied the constraint: report an upper bound
    rep.kind = XvalReport::Kind::upper_bound;
    double p_bound = 1.0 / (post_est.n_eff + 1.0);
    rep.two_log_bayes = 2 * (std::log(p_bound) - std::log(prior_est.p));
  } else if (prior_est.p <= 0) {
    rep.kind = XvalReport::Kind::lower_bound;
    double p_bound = 1.0 / (prior_est.n_eff + 1.0);
    rep.two_log_bayes = 2 * (std::log(post_est.p) - std::log(p_bound));
  } else {
    rep.kind = XvalReport::Kind::exact;
    rep.two_log_bayes = 2 * (std::log(post_est.p) - std::log(prior_est.p));
    // delta method on log p - log q
    rep.se_two_log_bayes = 2 * std::sqrt(post_est.se * post_est.se / (post_est.p * post_est.p) +
                                         prior_est.se * prior_est.se / (prior_est.p * prior_est.p));
  }
  rep.strong_conflict = rep.two_log_bayes > 5.0;
  return rep;
}

}  // namespace dollocat
