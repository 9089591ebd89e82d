#include "dollocat/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace dollocat {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Mask of the calibration's leaves; throws if a label is unknown.
std::uint64_t constraint_mask(const Phylogeny& tree, const Calibration& c) {
  std::uint64_t mask = 0;
  for (const auto& label : c.leaves) {
    int i = tree.leaf_index(label);
    if (i < 0) throw std::runtime_error("calibration names unknown leaf '" + label + "'");
    mask |= 1ull << i;
  }
  return mask;
}

}  // namespace

std::string Calibration::describe() const {
  std::ostringstream os;
  if (kind == Kind::leaf_age) {
    os << "leaf " << (leaves.empty() ? "?" : leaves[0]);
  } else {
    os << "clade {";
    for (std::size_t i = 0; i < leaves.size(); ++i) os << (i ? "," : "") << leaves[i];
    os << "}";
  }
  os << " in [" << (min_age ? std::to_string(*min_age) : "-inf") << ", "
     << (max_age ? std::to_string(*max_age) : "+inf") << "]";
  return os.str();
}

CalibrationSet CalibrationSet::without(int index) const {
  CalibrationSet out = *this;
  if (index < 0 || index >= static_cast<int>(out.constraints.size()))
    throw std::runtime_error("constraint index out of range");
  out.constraints.erase(out.constraints.begin() + index);
  return out;
}

CalibrationSet CalibrationSet::load_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  CalibrationSet cals;
  if (j.contains("root_cap")) cals.root_cap = j["root_cap"].get<double>();
  if (cals.root_cap <= 0) throw std::runtime_error("calibration file: root_cap must be positive");
  auto read_bounds = [](const nlohmann::json& e, Calibration& c) {
    if (e.contains("min")) c.min_age = e["min"].get<double>();
    if (e.contains("max")) c.max_age = e["max"].get<double>();
    if (c.min_age && c.max_age && *c.min_age > *c.max_age)
      throw std::runtime_error("calibration file: min exceeds max in " + c.describe());
  };
  for (const auto& e : j.value("clades", nlohmann::json::array())) {
    Calibration c;
    c.kind = Calibration::Kind::clade;
    for (const auto& l : e.at("leaves")) c.leaves.push_back(l.get<std::string>());
    if (c.leaves.empty()) throw std::runtime_error("calibration file: clade with empty leaf set");
    read_bounds(e, c);
    cals.constraints.push_back(std::move(c));
  }
  for (const auto& e : j.value("leaf_ages", nlohmann::json::array())) {
    Calibration c;
    c.kind = Calibration::Kind::leaf_age;
    c.leaves.push_back(e.at("leaf").get<std::string>());
    read_bounds(e, c);
    cals.constraints.push_back(std::move(c));
  }
  return cals;
}

std::string CalibrationSet::to_json() const {
  nlohmann::json j;
  j["root_cap"] = root_cap;
  j["clades"] = nlohmann::json::array();
  j["leaf_ages"] = nlohmann::json::array();
  for (const auto& c : constraints) {
    nlohmann::json e;
    if (c.kind == Calibration::Kind::clade) {
      e["leaves"] = c.leaves;
      if (c.min_age) e["min"] = *c.min_age;
      if (c.max_age) e["max"] = *c.max_age;
      j["clades"].push_back(e);
    } else {
      e["leaf"] = c.leaves.at(0);
      if (c.min_age) e["min"] = *c.min_age;
      if (c.max_age) e["max"] = *c.max_age;
      j["leaf_ages"].push_back(e);
    }
  }
  return j.dump(2);
}

bool satisfies(const Phylogeny& tree, const Calibration& c) {
  if (c.kind == Calibration::Kind::leaf_age) {
    int leaf = tree.leaf_index(c.leaves.at(0));
    if (leaf < 0) throw std::runtime_error("calibration names unknown leaf '" + c.leaves[0] + "'");
    double age = tree.at(leaf).age;
    if (c.min_age && age < *c.min_age) return false;
    if (c.max_age && age > *c.max_age) return false;
    return true;
  }
  std::uint64_t want = constraint_mask(tree, c);
  std::vector<int> leaves;
  for (int i = 0; i < tree.num_leaves(); ++i)
    if ((want >> i) & 1ull) leaves.push_back(i);
  int m = tree.mrca(leaves);
  if (tree.leaf_mask(m) != want) return false;  // not monophyletic
  double age = tree.at(m).age;
  if (c.min_age && age < *c.min_age) return false;
  if (c.max_age && age > *c.max_age) return false;
  return true;
}

std::vector<Violation> validate(const Phylogeny& tree, const CalibrationSet& cals) {
  if (auto err = tree.structural_error()) throw StructuralError("malformed tree: " + *err);

  std::vector<Violation> out;
  for (int i = 0; i < tree.num_leaves(); ++i)
    if (tree.at(i).age < 0)
      out.push_back({"leaf " + tree.at(i).label + " has negative age"});
  if (tree.at(tree.root()).age > cals.root_cap)
    out.push_back({"root age " + std::to_string(tree.at(tree.root()).age) + " exceeds the cap " +
                   std::to_string(cals.root_cap)});
  for (std::size_t c = 0; c < cals.constraints.size(); ++c)
    if (!satisfies(tree, cals.constraints[c]))
      out.push_back({"constraint " + std::to_string(c) + " violated: " + cals.constraints[c].describe()});
  return out;
}

NodeAgeBounds node_age_bounds(const Phylogeny& tree, const CalibrationSet& cals) {
  const int n = tree.num_nodes();
  NodeAgeBounds b;
  b.lower.assign(n, 0.0);
  b.upper.assign(n, cals.root_cap);

  // Per-node own bounds: fixed leaf ages, or the calibration attached to the
  // node (leaf interval, or the clade whose MRCA it is).
  std::vector<char> has_interval(n, 0);
  for (const auto& c : cals.constraints) {
    if (c.kind == Calibration::Kind::leaf_age) {
      int leaf = tree.leaf_index(c.leaves.at(0));
      if (leaf < 0) throw std::runtime_error("calibration names unknown leaf '" + c.leaves[0] + "'");
      if (c.min_age) b.lower[leaf] = std::max(b.lower[leaf], *c.min_age);
      if (c.max_age) b.upper[leaf] = std::min(b.upper[leaf], *c.max_age);
      has_interval[leaf] = 1;
    } else {
      std::uint64_t want = constraint_mask(tree, c);
      std::vector<int> leaves;
      for (int i = 0; i < tree.num_leaves(); ++i)
        if ((want >> i) & 1ull) leaves.push_back(i);
      int m = tree.mrca(leaves);
      if (tree.leaf_mask(m) != want)
        throw InfeasibleError("clade constraint not monophyletic on this topology: " + c.describe());
      if (c.min_age) b.lower[m] = std::max(b.lower[m], *c.min_age);
      if (c.max_age) b.upper[m] = std::min(b.upper[m], *c.max_age);
    }
  }
  for (int i = 0; i < tree.num_leaves(); ++i)
    if (!has_interval[i]) b.lower[i] = b.upper[i] = tree.at(i).age;  // fixed leaf

  // Lower bounds flow upward, upper bounds downward.
  for (int i : tree.postorder())
    if (!tree.at(i).is_leaf())
      for (int c : tree.at(i).children) b.lower[i] = std::max(b.lower[i], b.lower[c]);
  auto post = tree.postorder();
  for (auto it = post.rbegin(); it != post.rend(); ++it) {
    int i = *it;
    if (i != tree.root()) b.upper[i] = std::min(b.upper[i], b.upper[tree.at(i).parent]);
  }

  for (int i = 0; i < n; ++i)
    if (b.lower[i] > b.upper[i])
      throw InfeasibleError("empty admissible age interval for node " + std::to_string(i));
  return b;
}

double prior_log_density(const Phylogeny& tree, const CalibrationSet& cals) {
  try {
    if (!validate(tree, cals).empty()) return -kInf;
    NodeAgeBounds b = node_age_bounds(tree, cals);
    double t_r = tree.at(tree.root()).age;
    double logf = 0.0;
    for (int i = 0; i < tree.num_nodes(); ++i) {
      if (i == tree.root()) continue;                // root factor excluded
      if (b.lower[i] == b.upper[i]) continue;        // fixed leaf, not a free age
      if (b.upper[i] != cals.root_cap) continue;     // capped by a calibration
      if (t_r <= b.lower[i]) return -kInf;
      logf -= std::log(t_r - b.lower[i]);
    }
    return logf;
  } catch (const InfeasibleError&) {
    return -kInf;
  } catch (const StructuralError&) {
    return -kInf;
  }
}

std::vector<char> movable_ages(const Phylogeny& tree, const CalibrationSet& movability) {
  std::vector<char> out(tree.num_nodes(), 0);
  for (int i = tree.num_leaves(); i < tree.num_nodes(); ++i) out[i] = 1;
  for (const auto& c : movability.constraints) {
    if (c.kind != Calibration::Kind::leaf_age) continue;
    int leaf = tree.leaf_index(c.leaves.at(0));
    if (leaf < 0) continue;
    double lo = c.min_age.value_or(0.0);
    double hi = c.max_age.value_or(movability.root_cap);
    if (hi > lo) out[leaf] = 1;
  }
  return out;
}

}  // namespace dollocat
