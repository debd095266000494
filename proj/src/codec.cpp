#include "planforge/codec.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "planforge/hash.hpp"

namespace planforge {

SymbolVocab::SymbolVocab(const Schema& schema) : n_alias_(schema.table_count() * schema.alias_k), alias_k_(schema.alias_k) {
  for (int t = 0; t < schema.table_count(); ++t) {
    for (int i = 1; i <= schema.alias_k; ++i) names_.push_back(schema.alias_name({t, i}));
  }
  names_.insert(names_.end(), {"H", "M", "N", "<pad>"});
}

int SymbolVocab::id_of(std::string_view name) const {
  for (int i = 0; i < size(); ++i) {
    if (names_[i] == name) return i;
  }
  return -1;
}

uint64_t SymbolVocab::hash() const {
  uint64_t h = kFnvOffset;
  for (const auto& n : names_) h = fnv1a(n + "\n", h);
  return h;
}

std::string SymbolVocab::table_text() const {
  std::ostringstream os;
  for (int i = 0; i < size(); ++i) os << i << ' ' << names_[i] << '\n';
  return os.str();
}

DecoderState::DecoderState(const Query& query, const SymbolVocab& vocab)
    : query_(query), vocab_(vocab), symbol_to_local_(vocab.alias_symbol_count(), -1) {
  for (int i = 0; i < query.size(); ++i) {
    const int sym = vocab.alias_symbol(query.alias(i).alias);
    symbol_to_local_.at(sym) = i;
    units_.push_back({JoinTree::leaf(i), sym});
  }
  // Query aliases are sorted in vocabulary order already.
}

int DecoderState::unit_of_symbol(int symbol) const {
  if (!vocab_.is_alias(symbol)) return -1;
  const int local = symbol_to_local_[symbol];
  if (local < 0) return -1;
  for (int u = 0; u < unit_count(); ++u) {
    if (units_[u].tree.aliases() & (1u << local)) return u;
  }
  return -1;
}

std::vector<int> DecoderState::valid_symbols_at(PositionKind kind) const {
  std::vector<int> out;
  if (kind == PositionKind::Op) {
    for (JoinOp op : kAllJoinOps) out.push_back(vocab_.op_symbol(op));
    return out;
  }
  for (int u = 0; u < unit_count(); ++u) {
    if (kind == PositionKind::Right && u == pending_left_) continue;
    out.push_back(units_[u].representative);
  }
  return out;  // units_ is kept sorted by representative
}

int DecoderState::push(int token) {
  if (complete()) throw std::logic_error("DecoderState::push on a complete state");
  const PositionKind kind = next_;
  int symbol = token;
  bool valid = false;
  if (kind == PositionKind::Op) {
    valid = vocab_.is_op(token);
  } else {
    const int u = unit_of_symbol(token);
    valid = u >= 0 && !(kind == PositionKind::Right && u == pending_left_);
  }
  if (!valid) {
    const auto choices = valid_symbols_at(kind);
    const auto t = static_cast<uint64_t>(token < 0 ? -static_cast<int64_t>(token) : token);
    symbol = choices[t % choices.size()];
  }
  switch (kind) {
    case PositionKind::Left:
      pending_left_ = unit_of_symbol(symbol);
      next_ = PositionKind::Right;
      break;
    case PositionKind::Right:
      pending_right_ = unit_of_symbol(symbol);
      next_ = PositionKind::Op;
      break;
    case PositionKind::Op: {
      Unit joined{JoinTree::join(units_[pending_left_].tree, units_[pending_right_].tree, vocab_.op_of(symbol)),
                  std::min(units_[pending_left_].representative, units_[pending_right_].representative)};
      const int hi = std::max(pending_left_, pending_right_);
      const int lo = std::min(pending_left_, pending_right_);
      units_.erase(units_.begin() + hi);
      units_.erase(units_.begin() + lo);
      units_.insert(std::upper_bound(units_.begin(), units_.end(), joined,
                                     [](const Unit& a, const Unit& b) { return a.representative < b.representative; }),
                    std::move(joined));
      pending_left_ = pending_right_ = -1;
      next_ = PositionKind::Left;
      break;
    }
  }
  return symbol;
}

JoinTree DecoderState::finish() {
  pending_left_ = pending_right_ = -1;
  next_ = PositionKind::Left;
  while (!complete()) {
    push(units_[0].representative);
    push(units_[1].representative);
    push(vocab_.op_symbol(JoinOp::Hash));
  }
  return units_[0].tree;
}

PlanCodec::PlanCodec(SymbolVocab vocab, int max_aliases) : vocab_(std::move(vocab)), max_aliases_(max_aliases) {
  if (max_aliases < 2) throw std::invalid_argument("PlanCodec: max_aliases must be >= 2");
}

namespace {

int encode_subtree(const Query& q, const SymbolVocab& vocab, const JoinTree& t, std::vector<int>& out) {
  if (t.is_leaf()) return vocab.alias_symbol(q.alias(t.alias()).alias);
  const int l = encode_subtree(q, vocab, t.left(), out);
  const int r = encode_subtree(q, vocab, t.right(), out);
  out.insert(out.end(), {l, r, vocab.op_symbol(t.op())});
  return std::min(l, r);
}

}  // namespace

PlanTokenSeq PlanCodec::encode(const Query& query, const JoinTree& plan) const {
  if (!is_valid_plan(query, plan)) throw std::invalid_argument("encode: plan aliases do not match the query");
  if (query.size() > max_aliases_) throw std::invalid_argument("encode: query exceeds the codec's maximum size");
  PlanTokenSeq seq;
  seq.tokens.reserve(sequence_length());
  encode_subtree(query, vocab_, plan, seq.tokens);
  seq.tokens.resize(sequence_length(), vocab_.pad());
  return seq;
}

JoinTree PlanCodec::decode(const Query& query, const PlanTokenSeq& seq) const {
  DecoderState state(query, vocab_);
  const auto& tok = seq.tokens;
  for (size_t g = 0; !state.complete() && g + 3 <= tok.size(); g += 3) {
    if (tok[g] == vocab_.pad()) break;
    state.push(tok[g]);
    state.push(tok[g + 1]);
    state.push(tok[g + 2]);
  }
  return state.finish();
}

std::string PlanCodec::to_text(const PlanTokenSeq& seq) const {
  std::string out;
  for (size_t i = 0; i < seq.tokens.size(); ++i) {
    if (i) out += ' ';
    out += vocab_.name(seq.tokens[i]);
  }
  return out;
}

PlanTokenSeq PlanCodec::parse(std::string_view text) const {
  PlanTokenSeq seq;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) {
    const int id = vocab_.id_of(word);
    if (id < 0) throw std::invalid_argument("unknown symbol '" + word + "'");
    seq.tokens.push_back(id);
  }
  return seq;
}

}  // namespace planforge
