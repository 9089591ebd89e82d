#include <doctest.h>

#include <cmath>
#include <random>

#include "dollocat/calibration.hpp"
#include "dollocat/newick.hpp"
#include "dollocat/phylo_tree.hpp"

using namespace dollocat;

namespace {

Phylogeny three_leaf_tree(double t_internal = 500, double t_root = 1000) {
  auto ab = Phylogeny::join(Phylogeny::single_leaf("A", 0), Phylogeny::single_leaf("B", 0), t_internal);
  return Phylogeny::join(ab, Phylogeny::single_leaf("C", 0), t_root);
}

}  // namespace

TEST_CASE("tree length sums the finite edges") {
  auto cherry = Phylogeny::join(Phylogeny::single_leaf("A", 0), Phylogeny::single_leaf("B", 0), 1000);
  CHECK(cherry.tree_length() == doctest::Approx(2000));

  auto t3 = three_leaf_tree();
  // two pendant edges of 500, one pendant of 1000, one internal of 500
  CHECK(t3.tree_length() == doctest::Approx(2500));
}

TEST_CASE("tree length is invariant under leaf relabeling") {
  auto t = three_leaf_tree();
  auto relabeled = t;
  relabeled.at(0).label = "Z";
  relabeled.at(1).label = "Y";
  relabeled.at(2).label = "X";
  CHECK(t.tree_length() == doctest::Approx(relabeled.tree_length()));
}

TEST_CASE("mrca basics") {
  auto t = three_leaf_tree();
  int a = t.leaf_index("A"), b = t.leaf_index("B"), c = t.leaf_index("C");
  std::vector<int> just_a{a};
  CHECK(t.mrca(just_a) == a);
  std::vector<int> ab{a, b};
  int m = t.mrca(ab);
  CHECK(t.at(m).age == doctest::Approx(500));
  std::vector<int> ac{a, c};
  CHECK(t.mrca(ac) == t.root());
}

TEST_CASE("mrca agrees with ancestor-set intersection on random trees") {
  std::mt19937_64 rng(11);
  std::vector<std::string> labels{"a", "b", "c", "d", "e", "f", "g"};
  for (int rep = 0; rep < 25; ++rep) {
    auto t = random_ultrametric_tree(labels, 10000, rng);
    std::uniform_int_distribution<int> pick(0, t.num_leaves() - 1);
    std::vector<int> leaves;
    int k = 2 + static_cast<int>(rng() % 4);
    for (int i = 0; i < k; ++i) leaves.push_back(pick(rng));

    // oracle: intersect root paths, take the youngest common node
    std::vector<int> count(t.num_nodes(), 0);
    std::vector<int> uniq = leaves;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    for (int l : uniq)
      for (int n = l; n >= 0; n = t.at(n).parent) ++count[n];
    int oracle = -1;
    for (int n = 0; n < t.num_nodes(); ++n)
      if (count[n] == static_cast<int>(uniq.size()))
        if (oracle < 0 || t.at(n).age < t.at(oracle).age) oracle = n;
    CHECK(t.mrca(leaves) == oracle);
  }
}

TEST_CASE("newick round trip") {
  std::mt19937_64 rng(3);
  std::vector<std::string> labels{"alpha", "beta", "gamma", "delta", "eps"};
  for (int rep = 0; rep < 20; ++rep) {
    auto t = random_ultrametric_tree(labels, 8000, rng);
    t.at(labels.size()).n_cats = 2;  // some internal edge
    t.at(0).n_cats = 1;
    auto text = encode_newick(t);
    auto back = decode_newick(text);
    // ages are reconstructed through branch-length differences, so identity
    // holds to float round-off
    CHECK(back.same_topology_and_ages(t, 1e-8));
  }
}

TEST_CASE("newick decode fixes ages from depths") {
  auto t = decode_newick("((A:1000,B:1000):500,C:1500);");
  CHECK(t.num_leaves() == 3);
  CHECK(t.at(t.root()).age == doctest::Approx(1500));
  int a = t.leaf_index("A");
  CHECK(t.at(a).age == doctest::Approx(0));
  CHECK(t.at(t.at(a).parent).age == doctest::Approx(1000));
}

TEST_CASE("newick catastrophe annotation") {
  auto t = decode_newick("(A:1000[&k=2],B:1000):0;");
  int a = t.leaf_index("A");
  CHECK(t.at(a).n_cats == 2);
  CHECK(t.at(t.leaf_index("B")).n_cats == 0);
  CHECK(t.total_catastrophes() == 2);
}

TEST_CASE("newick parse errors carry a position") {
  CHECK_THROWS_WITH_AS(decode_newick("((A:1,B:2):3;"), doctest::Contains("position"), std::runtime_error);
  CHECK_THROWS(decode_newick("(A:1,A:2);"));
  CHECK_THROWS(decode_newick("(A:1,B:2)extra:1"));
}

TEST_CASE("validate: clean tree, root cap, and clade constraints") {
  auto t = three_leaf_tree(500, 8000);
  CalibrationSet cals;
  cals.root_cap = 16000;
  CHECK(validate(t, cals).empty());

  SUBCASE("root above the cap") {
    CalibrationSet tight;
    tight.root_cap = 7999;
    auto v = validate(t, tight);
    REQUIRE(v.size() == 1);
    CHECK(v[0].message.find("root age") != std::string::npos);
  }

  SUBCASE("clade age below its lower bound") {
    Calibration c;
    c.kind = Calibration::Kind::clade;
    c.leaves = {"A", "B"};
    c.min_age = 1300;
    cals.constraints.push_back(c);
    auto t2 = three_leaf_tree(1200, 8000);
    CHECK(validate(t2, cals).size() == 1);
    auto t3 = three_leaf_tree(1400, 8000);
    CHECK(validate(t3, cals).empty());
  }

  SUBCASE("non-monophyletic clade") {
    Calibration c;
    c.kind = Calibration::Kind::clade;
    c.leaves = {"A", "C"};
    cals.constraints.push_back(c);
    CHECK(validate(t, cals).size() == 1);
  }
}

TEST_CASE("validate throws a structural error for malformed trees") {
  auto t = three_leaf_tree();
  t.at(t.root()).age = 100;  // younger than its children
  CHECK_THROWS_AS(validate(t, CalibrationSet{}), StructuralError);
}

TEST_CASE("node age bounds") {
  auto t = three_leaf_tree(500, 8000);
  CalibrationSet cals;
  cals.root_cap = 16000;

  SUBCASE("unconstrained") {
    auto b = node_age_bounds(t, cals);
    int ab = t.mrca(std::vector<int>{t.leaf_index("A"), t.leaf_index("B")});
    CHECK(b.lower[ab] == doctest::Approx(0));
    CHECK(b.upper[ab] == doctest::Approx(16000));
    CHECK(b.upper[t.root()] == doctest::Approx(16000));
  }

  SUBCASE("clade interval narrows descendants and ancestors stay open") {
    Calibration c;
    c.kind = Calibration::Kind::clade;
    c.leaves = {"A", "B"};
    c.min_age = 3200;
    c.max_age = 3700;
    cals.constraints.push_back(c);
    auto t2 = three_leaf_tree(3500, 8000);
    auto b = node_age_bounds(t2, cals);
    int ab = t2.mrca(std::vector<int>{t2.leaf_index("A"), t2.leaf_index("B")});
    CHECK(b.lower[ab] == doctest::Approx(3200));
    CHECK(b.upper[ab] == doctest::Approx(3700));
    CHECK(b.lower[t2.root()] == doctest::Approx(3200));  // must sit above the clade floor
    CHECK(b.upper[t2.root()] == doctest::Approx(16000));
  }

  SUBCASE("conflicting bounds are infeasible") {
    Calibration lo;
    lo.kind = Calibration::Kind::clade;
    lo.leaves = {"A", "B", "C"};
    lo.max_age = 1000;
    Calibration hi;
    hi.kind = Calibration::Kind::clade;
    hi.leaves = {"A", "B"};
    hi.min_age = 2000;
    cals.constraints.push_back(lo);
    cals.constraints.push_back(hi);
    CHECK_THROWS_AS(node_age_bounds(t, cals), InfeasibleError);
  }
}

TEST_CASE("prior density: L=2 is flat in the root age, out of space is -inf") {
  auto cherry = Phylogeny::join(Phylogeny::single_leaf("A", 0), Phylogeny::single_leaf("B", 0), 4000);
  CalibrationSet cals;
  cals.root_cap = 16000;
  double f1 = prior_log_density(cherry, cals);
  cherry.at(cherry.root()).age = 12000;
  double f2 = prior_log_density(cherry, cals);
  CHECK(f1 == doctest::Approx(f2));  // constant in t_r when S \ {root} is empty
  cherry.at(cherry.root()).age = 16001;
  CHECK(prior_log_density(cherry, cals) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("prior density scales as 1/(t_r - floor) per uncapped internal node") {
  auto t = three_leaf_tree(500, 8000);
  CalibrationSet cals;
  cals.root_cap = 16000;
  // S \ {root} = {the AB node}, floor 0
  CHECK(prior_log_density(t, cals) == doctest::Approx(-std::log(8000.0)));
}

TEST_CASE("calibration json round trip") {
  CalibrationSet cals;
  cals.root_cap = 16000;
  Calibration c;
  c.kind = Calibration::Kind::clade;
  c.leaves = {"A", "B"};
  c.min_age = 1300;
  cals.constraints.push_back(c);
  Calibration l;
  l.kind = Calibration::Kind::leaf_age;
  l.leaves = {"Hittite"};
  l.min_age = 3200;
  l.max_age = 3700;
  cals.constraints.push_back(l);

  auto back = CalibrationSet::load_json(cals.to_json());
  CHECK(back.root_cap == 16000);
  REQUIRE(back.constraints.size() == 2);
  CHECK(back.constraints[0].kind == Calibration::Kind::clade);
  CHECK(back.constraints[1].kind == Calibration::Kind::leaf_age);
  CHECK(*back.constraints[1].max_age == doctest::Approx(3700));
  CHECK_THROWS(CalibrationSet::load_json("{\"clades\":[{\"leaves\":[\"A\"],\"min\":5,\"max\":1}]}"));
}

TEST_CASE("canonicalize orders internal nodes by age with the root last") {
  std::mt19937_64 rng(5);
  std::vector<std::string> labels{"a", "b", "c", "d", "e", "f"};
  for (int rep = 0; rep < 10; ++rep) {
    auto t = random_ultrametric_tree(labels, 9000, rng);
    for (int i = t.num_leaves(); i < t.num_nodes() - 1; ++i)
      CHECK(t.at(i).age < t.at(i + 1).age);
    CHECK(t.root() == t.num_nodes() - 1);
    CHECK_FALSE(t.structural_error().has_value());
  }
}
