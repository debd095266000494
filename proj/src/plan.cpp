#include "planforge/plan.hpp"

#include <bit>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "planforge/random.hpp"

namespace planforge {

std::string_view op_name(JoinOp op) {
  switch (op) {
    case JoinOp::Hash: return "hash";
    case JoinOp::Merge: return "merge";
    case JoinOp::NestLoop: return "nestloop";
  }
  return "?";
}

JoinOp parse_op(std::string_view name) {
  if (name == "hash") return JoinOp::Hash;
  if (name == "merge") return JoinOp::Merge;
  if (name == "nestloop") return JoinOp::NestLoop;
  throw std::invalid_argument("unknown join operator '" + std::string(name) + "'");
}

JoinTree JoinTree::leaf(int alias) {
  auto n = std::make_shared<Node>();
  n->leaf = true;
  n->alias = alias;
  n->mask = 1u << alias;
  return JoinTree(std::move(n));
}

JoinTree JoinTree::join(JoinTree left, JoinTree right, JoinOp op) {
  if (left.aliases() & right.aliases()) throw std::invalid_argument("join inputs overlap");
  auto n = std::make_shared<Node>();
  n->leaf = false;
  n->op = op;
  n->mask = left.aliases() | right.aliases();
  n->children = {std::move(left), std::move(right)};
  return JoinTree(std::move(n));
}

int JoinTree::leaf_count() const { return std::popcount(node_->mask); }

bool operator==(const JoinTree& a, const JoinTree& b) {
  if (a.node_ == b.node_) return true;
  if (a.is_leaf() != b.is_leaf()) return false;
  if (a.is_leaf()) return a.alias() == b.alias();
  return a.op() == b.op() && a.aliases() == b.aliases() && a.left() == b.left() && a.right() == b.right();
}

bool is_valid_plan(const Query& query, const JoinTree& plan) { return plan.aliases() == query.all_mask(); }

namespace {

void append_text(const Query& query, const JoinTree& t, std::string& out) {
  if (t.is_leaf()) {
    out += query.alias(t.alias()).name;
    return;
  }
  out += '(';
  append_text(query, t.left(), out);
  out += ' ';
  out += op_name(t.op());
  out += ' ';
  append_text(query, t.right(), out);
  out += ')';
}

class PlanParser {
 public:
  PlanParser(const Query& q, std::string_view text) : query_(q), text_(text) {}

  JoinTree parse() {
    JoinTree t = parse_tree();
    skip_ws();
    if (pos_ != text_.size()) fail("trailing characters");
    if (!is_valid_plan(query_, t)) fail("plan does not cover the query's aliases");
    return t;
  }

 private:
  void skip_ws() {
    while (pos_ < text_.size() && text_[pos_] == ' ') ++pos_;
  }
  std::string_view word() {
    skip_ws();
    const size_t start = pos_;
    while (pos_ < text_.size() && text_[pos_] != ' ' && text_[pos_] != '(' && text_[pos_] != ')') ++pos_;
    if (start == pos_) fail("expected a name");
    return text_.substr(start, pos_ - start);
  }
  JoinTree parse_tree() {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == '(') {
      ++pos_;
      JoinTree l = parse_tree();
      const JoinOp op = parse_op(word());
      JoinTree r = parse_tree();
      skip_ws();
      if (pos_ >= text_.size() || text_[pos_] != ')') fail("expected ')'");
      ++pos_;
      if (l.aliases() & r.aliases()) fail("alias used twice");
      return JoinTree::join(std::move(l), std::move(r), op);
    }
    const std::string name(word());
    const int local = query_.local_index(name);
    if (local < 0) fail("unknown alias '" + name + "'");
    return JoinTree::leaf(local);
  }
  [[noreturn]] void fail(const std::string& why) const {
    throw std::invalid_argument("cannot parse plan '" + std::string(text_) + "': " + why);
  }

  const Query& query_;
  std::string_view text_;
  size_t pos_ = 0;
};

}  // namespace

std::string to_text(const Query& query, const JoinTree& plan) {
  std::string out;
  append_text(query, plan, out);
  return out;
}

JoinTree parse_plan(const Query& query, std::string_view text) { return PlanParser(query, text).parse(); }

uint64_t plan_space_size(int n) {
  if (n < 1) return 0;
  // Catalan(n-1) * n! * 3^(n-1)
  uint64_t catalan = 1;
  for (int i = 0; i < n - 1; ++i) catalan = catalan * 2 * (2 * i + 1) / (i + 2);
  uint64_t fact = 1;
  for (int i = 2; i <= n; ++i) fact *= i;
  uint64_t ops = 1;
  for (int i = 0; i < n - 1; ++i) ops *= 3;
  return catalan * fact * ops;
}

namespace {

class PlanEnumerator {
 public:
  explicit PlanEnumerator(const Query& q) : query_(q) {}

  const std::vector<JoinTree>& trees(uint32_t mask) {
    if (auto it = memo_.find(mask); it != memo_.end()) return it->second;
    std::vector<JoinTree> out;
    if (std::has_single_bit(mask)) {
      out.push_back(JoinTree::leaf(std::countr_zero(mask)));
    } else {
      visit_splits(mask, [&](const JoinTree& t) { out.push_back(t); });
    }
    return memo_.emplace(mask, std::move(out)).first->second;
  }

  template <typename F>
  void visit_splits(uint32_t mask, F&& emit) {
    for (uint32_t left = (mask - 1) & mask; left; left = (left - 1) & mask) {
      const uint32_t right = mask ^ left;
      // Copies: memo_ may rehash while the right side is being built.
      const std::vector<JoinTree> ls = trees(left);
      const std::vector<JoinTree>& rs = trees(right);
      for (const auto& l : ls) {
        for (const auto& r : rs) {
          for (JoinOp op : kAllJoinOps) emit(JoinTree::join(l, r, op));
        }
      }
    }
  }

 private:
  const Query& query_;
  std::unordered_map<uint32_t, std::vector<JoinTree>> memo_;
};

}  // namespace

void for_each_plan(const Query& query, const std::function<void(const JoinTree&)>& visit, int cap) {
  if (query.size() > cap) {
    throw std::invalid_argument("enumerate_all_plans: query has " + std::to_string(query.size()) +
                                " aliases, above the enumeration cap of " + std::to_string(cap));
  }
  PlanEnumerator e(query);
  if (query.size() == 1) {
    visit(JoinTree::leaf(0));
    return;
  }
  e.visit_splits(query.all_mask(), visit);
}

std::vector<JoinTree> enumerate_all_plans(const Query& query, int cap) {
  std::vector<JoinTree> out;
  for_each_plan(query, [&](const JoinTree& t) { out.push_back(t); }, cap);
  return out;
}

JoinTree random_plan(const Query& query, uint64_t seed) {
  Rng rng(seed);
  std::vector<JoinTree> units;
  std::vector<int> parent(query.size());
  for (int i = 0; i < query.size(); ++i) {
    units.push_back(JoinTree::leaf(i));
    parent[i] = i;
  }
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::vector<int> order(query.edges().size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<int>(order));
  for (int e : order) {
    const auto& edge = query.edges()[e];
    int a = find(edge.left);
    int b = find(edge.right);
    if (a == b) continue;
    if (rng.bernoulli(0.5)) std::swap(a, b);
    const JoinOp op = kAllJoinOps[rng.uniform_int(3)];
    units[a] = JoinTree::join(units[a], units[b], op);
    parent[b] = a;
  }
  return units[find(0)];
}

bool contains_cross_join(const Query& query, const JoinTree& plan) {
  if (plan.is_leaf()) return false;
  if (!query.has_edge_between(plan.left().aliases(), plan.right().aliases())) return true;
  return contains_cross_join(query, plan.left()) || contains_cross_join(query, plan.right());
}

}  // namespace planforge
