#include "dollocat/trait_matrix.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace dollocat {

char to_char(TraitState s) {
  switch (s) {
    case TraitState::absent: return '0';
    case TraitState::present: return '1';
    default: return '?';
  }
}

TraitState trait_state_from_char(char c) {
  switch (c) {
    case '0': return TraitState::absent;
    case '1': return TraitState::present;
    case '?': return TraitState::unknown;
    default: throw std::runtime_error(std::string("illegal cell token '") + c + "'");
  }
}

TraitMatrix::TraitMatrix(std::vector<std::string> languages, std::vector<std::string> classes)
    : languages_(std::move(languages)), classes_(std::move(classes)) {
  cells_.assign(languages_.size() * classes_.size(), TraitState::absent);
}

int TraitMatrix::language_index(std::string_view label) const {
  for (int i = 0; i < num_languages(); ++i)
    if (languages_[i] == label) return i;
  return -1;
}

void TraitMatrix::append_column(std::string label, std::span<const TraitState> states) {
  if (states.size() != languages_.size())
    throw std::runtime_error("append_column: wrong number of rows");
  classes_.push_back(std::move(label));
  cells_.insert(cells_.end(), states.begin(), states.end());
}

ColumnStats column_stats(const TraitMatrix& m, int col) {
  if (col < 0 || col >= m.num_classes())
    throw std::out_of_range("column_stats: column index out of range");
  ColumnStats cs;
  cs.column = col;
  auto states = m.column(col);
  for (int i = 0; i < m.num_languages(); ++i) {
    switch (states[i]) {
      case TraitState::present:
        ++cs.n_present;
        cs.present_rows.push_back(i);
        break;
      case TraitState::unknown: ++cs.n_unknown; break;
      default: break;
    }
  }
  return cs;
}

std::vector<int> row_missing_counts(const TraitMatrix& m) {
  std::vector<int> q(m.num_languages(), 0);
  for (int a = 0; a < m.num_classes(); ++a) {
    auto states = m.column(a);
    for (int i = 0; i < m.num_languages(); ++i)
      if (states[i] == TraitState::unknown) ++q[i];
  }
  return q;
}

RegistrationRule::RegistrationRule(std::initializer_list<int> conditions) : mask_(1u << 1) {
  for (int c : conditions) {
    if (c < 1 || c > 6) throw std::runtime_error("registration condition must be in 1..6");
    mask_ |= 1u << c;
  }
}

RegistrationRule RegistrationRule::from_string(std::string_view text) {
  RegistrationRule rule;
  std::string token;
  std::stringstream ss{std::string(text)};
  while (std::getline(ss, token, ',')) {
    if (token.empty()) continue;
    int c = std::stoi(token);
    if (c < 1 || c > 6) throw std::runtime_error("registration condition must be in 1..6: " + token);
    rule.mask_ |= 1u << c;
  }
  return rule;
}

bool RegistrationRule::keeps(int y, int q, int num_languages) const {
  const int L = num_languages;
  if (y <= 0) return false;
  if (has(2) && y <= 1) return false;
  if (has(3) && y >= L) return false;
  if (has(4) && y >= L - 1) return false;
  if (has(5) && y + q >= L) return false;
  if (has(6) && y + q >= L - 1) return false;
  return true;
}

std::string RegistrationRule::to_string() const {
  std::string out;
  for (int c = 1; c <= 6; ++c) {
    if (!has(c)) continue;
    if (!out.empty()) out += ',';
    out += static_cast<char>('0' + c);
  }
  return out;
}

std::vector<int> check_registration_consistency(const TraitMatrix& m, const RegistrationRule& rule) {
  std::vector<int> bad;
  for (int a = 0; a < m.num_classes(); ++a) {
    auto cs = column_stats(m, a);
    if (!rule.keeps(cs.n_present, cs.n_unknown, m.num_languages())) bad.push_back(a);
  }
  return bad;
}

namespace {

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss{line};
  while (std::getline(ss, field, delim)) fields.push_back(field);
  if (!line.empty() && line.back() == delim) fields.emplace_back();
  return fields;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

TraitMatrix parse_trait_matrix(std::string_view text) {
  std::stringstream ss{std::string(text)};
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(ss, line)) {
    line = strip_cr(line);
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.size() < 2) throw std::runtime_error("trait matrix: need a header row and at least one language row");

  char delim = lines[0].find('\t') != std::string::npos ? '\t' : ',';
  auto header = split_line(lines[0], delim);

  const int rows = static_cast<int>(lines.size()) - 1;
  auto first_row = split_line(lines[1], delim);
  const int row_fields = static_cast<int>(first_row.size());
  // Header may or may not carry a corner label above the language column.
  int ncols = row_fields - 1;
  std::vector<std::string> class_labels;
  if (static_cast<int>(header.size()) == ncols + 1) {
    class_labels.assign(header.begin() + 1, header.end());
  } else if (static_cast<int>(header.size()) == ncols) {
    class_labels = header;
  } else {
    throw std::runtime_error("trait matrix: header has " + std::to_string(header.size()) +
                             " fields but rows have " + std::to_string(row_fields));
  }
  if (ncols < 1) throw std::runtime_error("trait matrix: no data columns");

  std::vector<std::string> languages(rows);
  TraitMatrix m;
  {
    std::unordered_set<std::string> seen;
    for (int r = 0; r < rows; ++r) {
      auto fields = split_line(lines[r + 1], delim);
      if (static_cast<int>(fields.size()) != row_fields)
        throw std::runtime_error("trait matrix: row " + std::to_string(r + 2) + " has " +
                                 std::to_string(fields.size()) + " fields, expected " + std::to_string(row_fields));
      languages[r] = fields[0];
      if (!seen.insert(fields[0]).second)
        throw std::runtime_error("trait matrix: duplicate language label '" + fields[0] + "'");
    }
    seen.clear();
    for (const auto& c : class_labels)
      if (!seen.insert(c).second) throw std::runtime_error("trait matrix: duplicate class label '" + c + "'");
  }
  if (rows < 2) throw std::runtime_error("trait matrix: need at least two languages");

  m = TraitMatrix(languages, class_labels);
  for (int r = 0; r < rows; ++r) {
    auto fields = split_line(lines[r + 1], delim);
    for (int c = 0; c < ncols; ++c) {
      const std::string& cell = fields[c + 1];
      if (cell.size() != 1)
        throw std::runtime_error("trait matrix: bad cell at row " + std::to_string(r + 2) + ", column " +
                                 std::to_string(c + 1) + ": '" + cell + "'");
      try {
        m.set(r, c, trait_state_from_char(cell[0]));
      } catch (const std::exception&) {
        throw std::runtime_error("trait matrix: illegal cell token '" + cell + "' at row " + std::to_string(r + 2) +
                                 ", column " + std::to_string(c + 1));
      }
    }
  }
  return m;
}

std::string to_delimited(const TraitMatrix& m, char delim) {
  std::string out = "language";
  for (const auto& c : m.classes()) {
    out += delim;
    out += c;
  }
  out += '\n';
  for (int r = 0; r < m.num_languages(); ++r) {
    out += m.languages()[r];
    for (int a = 0; a < m.num_classes(); ++a) {
      out += delim;
      out += to_char(m.at(r, a));
    }
    out += '\n';
  }
  return out;
}

}  // namespace dollocat
