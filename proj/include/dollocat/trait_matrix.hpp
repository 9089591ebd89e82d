#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dollocat {

enum class TraitState : std::uint8_t { absent = 0, present = 1, unknown = 2 };

char to_char(TraitState s);
TraitState trait_state_from_char(char c);  // throws on anything but 0/1/?

// Binary trait matrix over {present, absent, unknown}. Rows are languages,
// columns are trait classes. Stored column-major: the likelihood walks columns.
class TraitMatrix {
 public:
  TraitMatrix() = default;
  TraitMatrix(std::vector<std::string> languages, std::vector<std::string> classes);

  int num_languages() const { return static_cast<int>(languages_.size()); }
  int num_classes() const { return static_cast<int>(classes_.size()); }

  TraitState at(int row, int col) const { return cells_[static_cast<std::size_t>(col) * languages_.size() + row]; }
  void set(int row, int col, TraitState s) { cells_[static_cast<std::size_t>(col) * languages_.size() + row] = s; }

  std::span<const TraitState> column(int col) const {
    return {cells_.data() + static_cast<std::size_t>(col) * languages_.size(), languages_.size()};
  }

  const std::vector<std::string>& languages() const { return languages_; }
  const std::vector<std::string>& classes() const { return classes_; }

  int language_index(std::string_view label) const;  // -1 if unknown

  void append_column(std::string label, std::span<const TraitState> states);

  bool operator==(const TraitMatrix&) const = default;

 private:
  std::vector<std::string> languages_;
  std::vector<std::string> classes_;
  std::vector<TraitState> cells_;  // column-major
};

// Column registration statistics: Y visible presents, Q unknowns, m the rows
// known to carry the trait.
struct ColumnStats {
  int column = 0;
  int n_present = 0;
  int n_unknown = 0;
  std::vector<int> present_rows;
};

ColumnStats column_stats(const TraitMatrix& m, int col);

// Per-row count of unknown cells.
std::vector<int> row_missing_counts(const TraitMatrix& m);

// A registration rule is a set of thinning conditions compounded together.
// Condition 1 (keep only columns with a visible present) is always included.
//   1: Y > 0      2: Y > 1      3: Y < L
//   4: Y < L-1    5: Y+Q < L    6: Y+Q < L-1
class RegistrationRule {
 public:
  RegistrationRule() : mask_(1u << 1) {}
  RegistrationRule(std::initializer_list<int> conditions);
  static RegistrationRule from_string(std::string_view text);  // "1" or "1,2" ...

  bool has(int condition) const { return (mask_ >> condition) & 1u; }
  bool keeps(int y, int q, int num_languages) const;
  std::string to_string() const;

  bool operator==(const RegistrationRule&) const = default;

 private:
  std::uint32_t mask_;
};

// Columns of m whose (Y, Q) fail the rule predicate; empty means consistent.
std::vector<int> check_registration_consistency(const TraitMatrix& m, const RegistrationRule& rule);

// Parses a delimited table: header row of class labels, then one row per
// language starting with its label. Cells are 0, 1 or ?. The delimiter is
// auto-detected (comma or tab).
TraitMatrix parse_trait_matrix(std::string_view text);

std::string to_delimited(const TraitMatrix& m, char delim = ',');

}  // namespace dollocat
