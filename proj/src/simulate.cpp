#include "dollocat/simulate.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "dollocat/newick.hpp"

namespace dollocat {

std::vector<CatastrophePlacement> sample_catastrophes(Phylogeny& tree, double rho, Rng& rng) {
  for (int i = 0; i < tree.num_nodes(); ++i)
    if (i != tree.root()) tree.at(i).n_cats = static_cast<int>(poisson(rng, rho * tree.edge_length(i)));
  return place_catastrophes_uniform(tree, rng);
}

std::vector<CatastrophePlacement> place_catastrophes_uniform(const Phylogeny& tree, Rng& rng) {
  std::vector<CatastrophePlacement> out;
  for (int i = 0; i < tree.num_nodes(); ++i) {
    if (i == tree.root()) continue;
    const double lo = tree.at(i).age;
    const double hi = tree.at(tree.at(i).parent).age;
    for (int k = 0; k < tree.at(i).n_cats; ++k) out.push_back({i, uniform(rng, lo, hi)});
  }
  // deterministic processing order: by age, oldest first
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.age > b.age || (a.age == b.age && a.node < b.node);
  });
  return out;
}

namespace {

// One lineage descending toward node `target`, holding the identities of the
// classes currently alive in it.
struct Lineage {
  int target = -1;
  std::set<int> alive;
};

}  // namespace

TraitMatrix simulate_full_matrix(const Phylogeny& tree, const ModelParams& params,
                                 const std::vector<CatastrophePlacement>& catastrophes, Rng& rng,
                                 double borrow_rate) {
  if (!params.lambda) throw std::runtime_error("simulate_full_matrix: params.lambda is required");
  const double lambda = *params.lambda;
  const double mu = params.mu;
  const double kappa = params.kappa;
  const double nu = kappa * lambda / mu;  // catastrophe births keep the process reversible
  const int L = tree.num_leaves();

  int next_class = 0;
  std::vector<std::set<int>> at_leaf(L);

  // Boundary events (node arrivals and catastrophes), processed from the root
  // age downwards. Catastrophes carry their lineage; nodes are reached when
  // the clock hits their age.
  struct Boundary {
    double age;
    bool is_cat;
    int node;  // lineage target for both kinds
  };
  std::vector<Boundary> boundaries;
  for (int i = 0; i < tree.num_nodes(); ++i)
    if (i != tree.root()) boundaries.push_back({tree.at(i).age, false, i});
  for (const auto& c : catastrophes) boundaries.push_back({c.age, true, c.node});
  std::sort(boundaries.begin(), boundaries.end(), [](const Boundary& a, const Boundary& b) {
    if (a.age != b.age) return a.age > b.age;
    if (a.is_cat != b.is_cat) return !a.is_cat && b.is_cat;  // nodes first at equal age
    return a.node < b.node;
  });

  std::vector<Lineage> lineages;
  {
    // Equilibrium class set entering at the root.
    std::set<int> root_alive;
    long n0 = lambda > 0 ? poisson(rng, lambda / mu) : 0;
    for (long k = 0; k < n0; ++k) root_alive.insert(next_class++);
    const auto& root = tree.at(tree.root());
    lineages.push_back({root.children[0], root_alive});
    lineages.push_back({root.children[1], root_alive});
  }

  double now = tree.at(tree.root()).age;
  std::size_t next_boundary = 0;

  auto total_instances = [&] {
    std::size_t n = 0;
    for (const auto& l : lineages) n += l.alive.size();
    return static_cast<double>(n);
  };

  while (next_boundary < boundaries.size()) {
    const Boundary& b = boundaries[next_boundary];
    // Gillespie events until the clock reaches the next boundary.
    while (true) {
      const double n_inst = total_instances();
      const double rate = lineages.size() * lambda + n_inst * (mu + borrow_rate);
      if (rate <= 0) break;
      const double step = exponential(rng, rate);
      if (now - step <= b.age) break;
      now -= step;
      double pick = uniform(rng, 0.0, rate);
      bool done = false;
      for (auto& lin : lineages) {
        const double lin_rate = lambda + lin.alive.size() * (mu + borrow_rate);
        if (pick >= lin_rate) {
          pick -= lin_rate;
          continue;
        }
        if (pick < lambda) {
          lin.alive.insert(next_class++);
        } else {
          // choose the instance
          int idx = static_cast<int>((pick - lambda) / (mu + borrow_rate));
          idx = std::min<int>(idx, static_cast<int>(lin.alive.size()) - 1);
          auto it = lin.alive.begin();
          std::advance(it, idx);
          const int cls = *it;
          const double which = uniform(rng, 0.0, mu + borrow_rate);
          if (which < mu) {
            lin.alive.erase(it);
          } else if (lineages.size() >= 2) {
            // borrow: copy into one uniformly chosen other lineage
            int other = uniform_int(rng, 0, static_cast<int>(lineages.size()) - 2);
            for (std::size_t j = 0; j < lineages.size(); ++j) {
              if (&lineages[j] == &lin) continue;
              if (other == 0) {
                lineages[j].alive.insert(cls);
                break;
              }
              --other;
            }
          }  // a lone lineage has nowhere to lend
        }
        done = true;
        break;
      }
      if (!done) break;
    }
    now = b.age;

    auto lin_it = std::find_if(lineages.begin(), lineages.end(),
                               [&](const Lineage& l) { return l.target == b.node; });
    if (lin_it == lineages.end()) throw std::logic_error("simulator lost a lineage");

    if (b.is_cat) {
      std::set<int> survivors;
      for (int cls : lin_it->alive)
        if (uniform01(rng) >= kappa) survivors.insert(cls);
      long births = nu > 0 ? poisson(rng, nu) : 0;
      for (long k = 0; k < births; ++k) survivors.insert(next_class++);
      lin_it->alive = std::move(survivors);
    } else if (tree.at(b.node).is_leaf()) {
      at_leaf[b.node] = std::move(lin_it->alive);
      lineages.erase(lin_it);
    } else {
      std::set<int> alive = std::move(lin_it->alive);
      lin_it->target = tree.at(b.node).children[0];
      lin_it->alive = alive;
      lineages.push_back({tree.at(b.node).children[1], std::move(alive)});
    }
    ++next_boundary;
  }

  std::vector<std::string> labels;
  for (int i = 0; i < L; ++i) labels.push_back(tree.at(i).label);
  std::vector<std::string> classes(next_class);
  for (int c = 0; c < next_class; ++c) classes[c] = "c" + std::to_string(c + 1);
  TraitMatrix full(labels, classes);
  for (int l = 0; l < L; ++l)
    for (int cls : at_leaf[l]) full.set(l, cls, TraitState::present);
  return full;
}

MaskedMatrix apply_masking(const TraitMatrix& full, const std::vector<double>& xi, Rng& rng) {
  const int L = full.num_languages();
  const int N = full.num_classes();
  if (static_cast<int>(xi.size()) != L) throw std::runtime_error("apply_masking: xi size mismatch");
  for (double x : xi)
    if (x < 0 || x > 1) throw std::runtime_error("apply_masking: xi entries must lie in [0,1]");
  MaskedMatrix out;
  out.mask.assign(L, std::vector<std::uint8_t>(N, 1));
  out.data = full;
  for (int a = 0; a < N; ++a)
    for (int i = 0; i < L; ++i)
      if (uniform01(rng) >= xi[i]) {
        out.mask[i][a] = 0;
        out.data.set(i, a, TraitState::unknown);
      }
  return out;
}

TraitMatrix apply_registration(const TraitMatrix& masked, const RegistrationRule& rule) {
  const int L = masked.num_languages();
  TraitMatrix out(masked.languages(), {});
  int kept = 0;
  for (int a = 0; a < masked.num_classes(); ++a) {
    auto cs = column_stats(masked, a);
    if (!rule.keeps(cs.n_present, cs.n_unknown, L)) continue;
    ++kept;
    out.append_column("c" + std::to_string(kept), masked.column(a));
  }
  return out;
}

SyntheticBundle make_bundle(const Phylogeny& tree, const ModelParams& params, const RegistrationRule& rule,
                            std::uint64_t seed, double borrow_rate, bool sample_cats) {
  SyntheticBundle b;
  b.tree = tree;
  b.params = params;
  b.rule = rule;
  b.seed = seed;
  b.borrow_rate = borrow_rate;

  Rng rng = make_rng(seed, 0x51);
  b.catastrophes = sample_cats ? sample_catastrophes(b.tree, params.rho, rng)
                               : place_catastrophes_uniform(b.tree, rng);
  b.full = simulate_full_matrix(b.tree, params, b.catastrophes, rng, borrow_rate);
  auto masked = apply_masking(b.full, params.xi, rng);
  b.mask = std::move(masked.mask);
  b.masked = std::move(masked.data);
  b.registered = apply_registration(b.masked, rule);
  return b;
}

void write_bundle(const SyntheticBundle& b, const std::string& directory) {
  namespace fs = std::filesystem;
  fs::create_directories(directory);
  auto write_file = [&](const std::string& name, const std::string& content) {
    std::ofstream out(fs::path(directory) / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + name + " in " + directory);
    out << content;
  };
  write_file("d_full.csv", to_delimited(b.full));
  write_file("d_masked.csv", to_delimited(b.masked));
  write_file("d_registered.csv", to_delimited(b.registered));
  write_file("tree.nwk", encode_newick(b.tree) + "\n");

  std::string mask_text = "language";
  for (const auto& c : b.full.classes()) mask_text += "," + c;
  mask_text += '\n';
  for (int i = 0; i < b.full.num_languages(); ++i) {
    mask_text += b.full.languages()[i];
    for (int a = 0; a < b.full.num_classes(); ++a)
      mask_text += b.mask[i][a] ? ",1" : ",0";
    mask_text += '\n';
  }
  write_file("mask.csv", mask_text);

  nlohmann::json truth;
  truth["seed"] = b.seed;
  truth["rule"] = b.rule.to_string();
  truth["borrow_rate"] = b.borrow_rate;
  truth["mu"] = b.params.mu;
  truth["kappa"] = b.params.kappa;
  truth["rho"] = b.params.rho;
  truth["xi"] = b.params.xi;
  if (b.params.lambda) truth["lambda"] = *b.params.lambda;
  truth["root_age"] = b.tree.at(b.tree.root()).age;
  truth["n_full"] = b.full.num_classes();
  truth["n_registered"] = b.registered.num_classes();
  truth["total_catastrophes"] = b.tree.total_catastrophes();
  truth["catastrophes"] = nlohmann::json::array();
  for (const auto& c : b.catastrophes)
    truth["catastrophes"].push_back({{"edge_above", c.node}, {"age", c.age}});
  write_file("truth.json", truth.dump(2) + "\n");
}

}  // namespace dollocat
