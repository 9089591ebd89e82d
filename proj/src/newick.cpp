#include "dollocat/newick.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace dollocat {

namespace {

std::string format_years(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

void encode_node(const Phylogeny& t, int node, std::string& out) {
  const auto& n = t.at(node);
  if (n.is_leaf()) {
    out += n.label;
  } else {
    out += '(';
    encode_node(t, n.children[0], out);
    out += ',';
    encode_node(t, n.children[1], out);
    out += ')';
  }
  if (node == t.root()) {
    out += ":0[&age=" + format_years(n.age) + "]";
  } else {
    out += ':' + format_years(t.edge_length(node));
    if (n.n_cats > 0) out += "[&k=" + std::to_string(n.n_cats) + "]";
  }
}

struct RawNode {
  std::string label;
  double branch = 0.0;
  int n_cats = 0;
  double root_age = std::numeric_limits<double>::quiet_NaN();
  std::vector<int> children;
};

struct Parser {
  std::string_view text;
  std::size_t pos = 0;
  std::vector<RawNode> nodes;

  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error("newick parse error at position " + std::to_string(pos) + ": " + what);
  }

  char peek() const { return pos < text.size() ? text[pos] : '\0'; }
  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos;
  }
  void skip_ws() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  }

  double number() {
    skip_ws();
    std::size_t start = pos;
    while (pos < text.size() && (std::isdigit(static_cast<unsigned char>(text[pos])) || text[pos] == '.' ||
                                 text[pos] == '-' || text[pos] == '+' || text[pos] == 'e' || text[pos] == 'E'))
      ++pos;
    if (pos == start) fail("expected a number");
    double value = 0.0;
    auto res = std::from_chars(text.data() + start, text.data() + pos, value);
    if (res.ec != std::errc{}) fail("bad number '" + std::string(text.substr(start, pos - start)) + "'");
    return value;
  }

  std::string identifier() {
    skip_ws();
    std::size_t start = pos;
    while (pos < text.size() && (std::isalnum(static_cast<unsigned char>(text[pos])) || text[pos] == '_'))
      ++pos;
    return std::string(text.substr(start, pos - start));
  }

  std::string label() {
    skip_ws();
    std::size_t start = pos;
    while (pos < text.size() && text[pos] != ':' && text[pos] != ',' && text[pos] != ')' && text[pos] != '(' &&
           text[pos] != ';' && text[pos] != '[' && !std::isspace(static_cast<unsigned char>(text[pos])))
      ++pos;
    return std::string(text.substr(start, pos - start));
  }

  // [&k=2] or [&age=1500], possibly several in sequence.
  void annotations(RawNode& node) {
    skip_ws();
    while (peek() == '[') {
      ++pos;
      expect('&');
      std::string key = identifier();
      expect('=');
      double value = number();
      expect(']');
      if (key == "k") {
        if (value < 0 || value != std::floor(value)) fail("catastrophe count must be a non-negative integer");
        node.n_cats = static_cast<int>(value);
      } else if (key == "age") {
        node.root_age = value;
      } else {
        fail("unknown annotation '&" + key + "'");
      }
      skip_ws();
    }
  }

  int node() {
    skip_ws();
    RawNode raw;
    if (peek() == '(') {
      ++pos;
      raw.children.push_back(node());
      skip_ws();
      while (peek() == ',') {
        ++pos;
        raw.children.push_back(node());
        skip_ws();
      }
      expect(')');
      if (raw.children.size() != 2)
        fail("internal nodes must have exactly two children, found " + std::to_string(raw.children.size()));
      (void)label();  // optional internal label, discarded
    } else {
      raw.label = label();
      if (raw.label.empty()) fail("expected a leaf label");
    }
    skip_ws();
    if (peek() == ':') {
      ++pos;
      raw.branch = number();
    }
    annotations(raw);
    nodes.push_back(std::move(raw));
    return static_cast<int>(nodes.size()) - 1;
  }
};

}  // namespace

std::string encode_newick(const Phylogeny& tree) {
  Phylogeny t = tree;
  t.canonicalize();
  std::string out;
  encode_node(t, t.root(), out);
  out += ';';
  return out;
}

Phylogeny decode_newick(std::string_view text) {
  Parser p{text};
  int raw_root = p.node();
  p.skip_ws();
  p.expect(';');
  p.skip_ws();
  if (p.pos != text.size()) p.fail("trailing characters after ';'");

  const auto& raw = p.nodes;
  int n_leaves = 0;
  for (const auto& r : raw)
    if (r.children.empty()) ++n_leaves;
  if (n_leaves < 2) throw std::runtime_error("newick parse error: need at least two leaves");

  // Depths from the root, then ages; without a root age the deepest leaf sits
  // at age zero.
  std::vector<double> depth(raw.size(), 0.0);
  std::vector<int> order;  // preorder over the raw forest
  std::vector<int> stack{raw_root};
  while (!stack.empty()) {
    int i = stack.back();
    stack.pop_back();
    order.push_back(i);
    for (int c : raw[i].children) {
      depth[c] = depth[i] + raw[c].branch;
      stack.push_back(c);
    }
  }
  double max_depth = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i)
    if (raw[i].children.empty()) max_depth = std::max(max_depth, depth[i]);
  double root_age = std::isnan(raw[raw_root].root_age) ? max_depth : raw[raw_root].root_age;

  // Leaves first, in encounter order along the text (raw indices are postorder).
  std::vector<int> new_index(raw.size(), -1);
  std::vector<PhyloNode> nodes(raw.size());
  int leaf_at = 0, internal_at = n_leaves;
  for (std::size_t i = 0; i < raw.size(); ++i)
    new_index[i] = raw[i].children.empty() ? leaf_at++ : internal_at++;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    PhyloNode node;
    node.label = raw[i].label;
    node.age = root_age - depth[i];
    node.n_cats = static_cast<int>(i) == raw_root ? 0 : raw[i].n_cats;
    if (!raw[i].children.empty())
      node.children = {new_index[raw[i].children[0]], new_index[raw[i].children[1]]};
    nodes[new_index[i]] = std::move(node);
  }
  for (std::size_t i = 0; i < raw.size(); ++i)
    for (int c : raw[i].children) nodes[new_index[c]].parent = new_index[i];

  for (int i = 0; i < n_leaves; ++i)
    for (int j = i + 1; j < n_leaves; ++j)
      if (nodes[i].label == nodes[j].label)
        throw std::runtime_error("newick parse error: duplicate leaf label '" + nodes[i].label + "'");

  try {
    return Phylogeny::from_parts(std::move(nodes), n_leaves);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("newick parse error: ") + e.what());
  }
}

}  // namespace dollocat
