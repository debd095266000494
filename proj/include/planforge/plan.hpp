#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "planforge/schema.hpp"

namespace planforge {

enum class JoinOp : uint8_t { Hash = 0, Merge = 1, NestLoop = 2 };

inline constexpr std::array<JoinOp, 3> kAllJoinOps{JoinOp::Hash, JoinOp::Merge, JoinOp::NestLoop};

std::string_view op_name(JoinOp op);
JoinOp parse_op(std::string_view name);

/// Immutable binary join tree over query-local alias indices. Children are
/// ordered: the left input is the build/outer side. Copies share structure.
class JoinTree {
 public:
  static JoinTree leaf(int alias);
  static JoinTree join(JoinTree left, JoinTree right, JoinOp op);

  bool is_leaf() const;
  int alias() const;
  JoinOp op() const;
  const JoinTree& left() const;
  const JoinTree& right() const;
  /// Bitmask of the leaves below this node.
  uint32_t aliases() const;
  int leaf_count() const;
  int join_count() const { return leaf_count() - 1; }

  friend bool operator==(const JoinTree& a, const JoinTree& b);

 private:
  struct Node;
  explicit JoinTree(std::shared_ptr<const Node> node) : node_(std::move(node)) {}
  std::shared_ptr<const Node> node_;
};

struct JoinTree::Node {
  bool leaf = true;
  int alias = 0;
  JoinOp op = JoinOp::Hash;
  uint32_t mask = 0;
  std::vector<JoinTree> children;
};

inline bool JoinTree::is_leaf() const { return node_->leaf; }
inline int JoinTree::alias() const { return node_->alias; }
inline JoinOp JoinTree::op() const { return node_->op; }
inline const JoinTree& JoinTree::left() const { return node_->children[0]; }
inline const JoinTree& JoinTree::right() const { return node_->children[1]; }
inline uint32_t JoinTree::aliases() const { return node_->mask; }

/// True when the leaves of `plan` are exactly the aliases of `query`.
bool is_valid_plan(const Query& query, const JoinTree& plan);

/// Parenthesized text form, e.g. "(A hash (B merge C))".
std::string to_text(const Query& query, const JoinTree& plan);
JoinTree parse_plan(const Query& query, std::string_view text);

/// Ordered binary trees with labeled leaves: C(n-1) * n! shapes, times 3^(n-1)
/// operator assignments.
uint64_t plan_space_size(int n_aliases);

inline constexpr int kDefaultEnumerationCap = 6;

/// Visits every ordered join tree with every operator assignment exactly once.
void for_each_plan(const Query& query, const std::function<void(const JoinTree&)>& visit,
                   int cap = kDefaultEnumerationCap);
std::vector<JoinTree> enumerate_all_plans(const Query& query, int cap = kDefaultEnumerationCap);

/// Random spanning tree over the query graph: each edge that joins two
/// components adds a join node; operand order and operator are uniform.
JoinTree random_plan(const Query& query, uint64_t seed);

bool contains_cross_join(const Query& query, const JoinTree& plan);

}  // namespace planforge
