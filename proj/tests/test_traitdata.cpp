#include <doctest.h>

#include <random>
#include <stdexcept>

#include "dollocat/trait_matrix.hpp"

using namespace dollocat;

TEST_CASE("parse a small comma table") {
  auto m = parse_trait_matrix("c1,c2,c3\nA,1,0,?\nB,0,1,1\n");
  CHECK(m.num_languages() == 2);
  CHECK(m.num_classes() == 3);
  CHECK(m.at(0, 0) == TraitState::present);
  CHECK(m.at(0, 2) == TraitState::unknown);
  CHECK(m.at(1, 2) == TraitState::present);
  CHECK(m.languages()[1] == "B");
}

TEST_CASE("parse with corner label and tabs") {
  auto m = parse_trait_matrix("lang\tc1\tc2\nA\t1\t0\nB\t?\t1\n");
  CHECK(m.num_classes() == 2);
  CHECK(m.at(1, 0) == TraitState::unknown);
}

TEST_CASE("the six-language 'he dies' table") {
  const char* text =
      "dies1,dies2,dies3\n"
      "OldEnglish,1,0,0\n"
      "OldHighGerman,1,1,0\n"
      "Avestan,0,0,1\n"
      "OldChurchSlavonic,0,0,1\n"
      "Latin,0,0,1\n"
      "Oscan,?,?,?\n";
  auto m = parse_trait_matrix(text);
  CHECK(m.num_languages() == 6);
  auto col = m.column(0);
  CHECK(col[0] == TraitState::present);
  CHECK(col[1] == TraitState::present);
  CHECK(col[2] == TraitState::absent);
  CHECK(col[5] == TraitState::unknown);

  auto cs = column_stats(m, 0);
  CHECK(cs.n_present == 2);
  CHECK(cs.n_unknown == 1);
  CHECK(cs.present_rows == std::vector<int>{0, 1});

  auto q = row_missing_counts(m);
  CHECK(q == std::vector<int>{0, 0, 0, 0, 0, 3});
}

TEST_CASE("parse errors") {
  CHECK_THROWS_WITH_AS(parse_trait_matrix("c1,c2\nA,1,0\nB,1\n"), doctest::Contains("row 3"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_trait_matrix("c1\nA,2\nB,1\n"), doctest::Contains("illegal cell token"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_trait_matrix("c1\nA,1\nA,0\n"), doctest::Contains("duplicate language"),
                       std::runtime_error);
  CHECK_THROWS(parse_trait_matrix("c1,c1\nA,1,0\nB,0,1\n"));
}

TEST_CASE("column stats on an all-unknown column") {
  auto m = parse_trait_matrix("c1\nA,?\nB,?\nC,?\n");
  auto cs = column_stats(m, 0);
  CHECK(cs.n_present == 0);
  CHECK(cs.n_unknown == 3);
  CHECK(cs.present_rows.empty());
  CHECK_THROWS_AS(column_stats(m, 1), std::out_of_range);
}

TEST_CASE("column stats agree with a direct recount on random matrices") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> cell(0, 2);
  for (int rep = 0; rep < 20; ++rep) {
    TraitMatrix m({"a", "b", "c", "d", "e"}, std::vector<std::string>(20));
    m = TraitMatrix({"a", "b", "c", "d", "e"},
                    [] {
                      std::vector<std::string> cs(20);
                      for (int i = 0; i < 20; ++i) cs[i] = "c" + std::to_string(i);
                      return cs;
                    }());
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 20; ++c) m.set(r, c, static_cast<TraitState>(cell(rng)));

    auto q = row_missing_counts(m);
    for (int r = 0; r < 5; ++r) {
      int direct = 0;
      for (int c = 0; c < 20; ++c)
        if (m.at(r, c) == TraitState::unknown) ++direct;
      CHECK(q[r] == direct);
    }
    for (int c = 0; c < 20; ++c) {
      auto cs = column_stats(m, c);
      int y = 0, q2 = 0, zeros = 0;
      for (int r = 0; r < 5; ++r) {
        if (m.at(r, c) == TraitState::present) ++y;
        if (m.at(r, c) == TraitState::unknown) ++q2;
        if (m.at(r, c) == TraitState::absent) ++zeros;
      }
      CHECK(cs.n_present == y);
      CHECK(cs.n_unknown == q2);
      CHECK(y + q2 + zeros == 5);
      CHECK(static_cast<int>(cs.present_rows.size()) == y);
    }
  }
}

TEST_CASE("registration rules") {
  RegistrationRule r1;
  CHECK(r1.has(1));
  CHECK(r1.keeps(1, 0, 4));
  CHECK_FALSE(r1.keeps(0, 4, 4));

  auto r12 = RegistrationRule::from_string("1,2");
  CHECK(r12.keeps(2, 0, 4));
  CHECK_FALSE(r12.keeps(1, 0, 4));

  auto r15 = RegistrationRule::from_string("1,5");
  CHECK_FALSE(r15.keeps(2, 2, 4));  // Y+Q = L
  CHECK(r15.keeps(2, 1, 4));

  CHECK(RegistrationRule{}.to_string() == "1");
  CHECK(RegistrationRule({1, 2, 4}).to_string() == "1,2,4");
  CHECK(RegistrationRule::from_string("2").has(1));  // condition 1 is implicit
  CHECK_THROWS(RegistrationRule::from_string("7"));
}

TEST_CASE("registration consistency check") {
  auto m = parse_trait_matrix("c1,c2,c3\nA,0,1,1\nB,0,1,0\nC,?,0,1\n");
  // column 0 has Y=0
  CHECK(check_registration_consistency(m, RegistrationRule{}) == std::vector<int>{0});
  auto r12 = RegistrationRule::from_string("1,2");
  CHECK(check_registration_consistency(m, r12) == std::vector<int>{0});
  // rule {1,5}: column 0 also fails Y+Q >= L via... column 0: Y=0 fails 1.
  auto m2 = parse_trait_matrix("c1\nA,1\nB,1\nC,?\n");
  auto r15 = RegistrationRule::from_string("1,5");
  CHECK(check_registration_consistency(m2, r15) == std::vector<int>{0});
  CHECK(check_registration_consistency(m2, RegistrationRule{}).empty());
}

TEST_CASE("round trip through delimited text") {
  auto m = parse_trait_matrix("c1,c2\nA,1,?\nB,0,1\n");
  auto text = to_delimited(m);
  auto m2 = parse_trait_matrix(text);
  CHECK(m == m2);
}
