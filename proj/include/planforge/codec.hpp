#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "planforge/plan.hpp"
#include "planforge/schema.hpp"

namespace planforge {

/// Symbol table of the plan string language. Ids are dense: one symbol per
/// (table, alias index) pair ordered by table then index, then the three
/// operator symbols H, M, N, then the pad symbol.
class SymbolVocab {
 public:
  explicit SymbolVocab(const Schema& schema);

  int size() const { return static_cast<int>(names_.size()); }
  int alias_symbol_count() const { return n_alias_; }
  int alias_symbol(Alias a) const { return a.table * alias_k_ + (a.index - 1); }
  int op_symbol(JoinOp op) const { return n_alias_ + static_cast<int>(op); }
  int pad() const { return n_alias_ + 3; }
  bool is_alias(int id) const { return id >= 0 && id < n_alias_; }
  bool is_op(int id) const { return id >= n_alias_ && id < n_alias_ + 3; }
  JoinOp op_of(int id) const { return static_cast<JoinOp>(id - n_alias_); }
  const std::string& name(int id) const { return names_.at(id); }
  int id_of(std::string_view name) const;  // -1 when unknown
  uint64_t hash() const;

  /// One "id name" line per symbol.
  std::string table_text() const;

 private:
  int n_alias_ = 0;
  int alias_k_ = 1;
  std::vector<std::string> names_;
};

/// Fixed-length token sequence, pad-filled.
struct PlanTokenSeq {
  std::vector<int> tokens;

  friend bool operator==(const PlanTokenSeq&, const PlanTokenSeq&) = default;
};

enum class PositionKind { Left, Right, Op };

/// Left-to-right decoder state: the available units are the unjoined aliases
/// and the subtrees formed so far. Any leaf symbol of a unit denotes the unit.
class DecoderState {
 public:
  DecoderState(const Query& query, const SymbolVocab& vocab);

  /// Sorted valid symbols for the next position. Operand positions list the
  /// smallest leaf symbol of each eligible unit.
  std::vector<int> valid_symbols_at(PositionKind kind) const;
  PositionKind next_position() const { return next_; }
  /// Consumes one token, repairing it with valid[token mod |valid|] when it
  /// is not valid here. Returns the symbol actually used.
  int push(int token);
  int unit_count() const { return static_cast<int>(units_.size()); }
  bool complete() const { return units_.size() == 1; }
  /// Drops a partial group and joins the two lowest-id units with Hash until
  /// one tree remains.
  JoinTree finish();

 private:
  struct Unit {
    JoinTree tree;
    int representative;  // smallest vocab id among the leaves
  };
  int unit_of_symbol(int symbol) const;  // -1 when not available

  const Query& query_;
  const SymbolVocab& vocab_;
  std::vector<Unit> units_;  // sorted by representative
  std::vector<int> symbol_to_local_;
  PositionKind next_ = PositionKind::Left;
  int pending_left_ = -1;
  int pending_right_ = -1;
};

class PlanCodec {
 public:
  PlanCodec(SymbolVocab vocab, int max_aliases);

  const SymbolVocab& vocab() const { return vocab_; }
  int max_aliases() const { return max_aliases_; }
  int sequence_length() const { return 3 * (max_aliases_ - 1); }

  /// Post-order (left, right, op) triples; a subtree is named by its smallest
  /// leaf symbol.
  PlanTokenSeq encode(const Query& query, const JoinTree& plan) const;
  /// Total: every token sequence decodes to a valid plan for `query`. A pad
  /// symbol at a left position ends the input.
  JoinTree decode(const Query& query, const PlanTokenSeq& tokens) const;

  std::string to_text(const PlanTokenSeq& tokens) const;
  PlanTokenSeq parse(std::string_view text) const;

 private:
  SymbolVocab vocab_;
  int max_aliases_;
};

}  // namespace planforge
