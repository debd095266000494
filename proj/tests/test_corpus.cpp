#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "planforge/corpus.hpp"
#include "planforge/reference.hpp"

using namespace planforge;

TEST(Corpus, TwoTableCorpusRoundTripsThroughCodec) {
  const Schema s = generate_schema(2, 1.0, 1, 3);
  CorpusConfig cfg;
  cfg.max_aliases = 2;
  const Corpus c = build_corpus(s, 10, 1, cfg);
  ASSERT_EQ(c.entries.size(), 10u);
  const PlanCodec codec(SymbolVocab(s), c.max_aliases);
  for (const auto& e : c.entries) {
    const Query& q = c.queries[e.query];
    const JoinTree p = codec.decode(q, e.tokens);
    ASSERT_TRUE(is_valid_plan(q, p));
    ASSERT_EQ(codec.encode(q, p), e.tokens);
  }
}

TEST(Corpus, EntriesDecodeAndAreDistinctPerQuery) {
  const Schema s = reference_schema();
  const Corpus c = build_corpus(s, 2000, 5);
  const PlanCodec codec(SymbolVocab(s), c.max_aliases);
  std::map<int, std::set<std::string>> per_query;
  std::set<int> sizes;
  for (const auto& e : c.entries) {
    const Query& q = c.queries[e.query];
    sizes.insert(q.size());
    ASSERT_EQ(static_cast<int>(e.tokens.tokens.size()), codec.sequence_length());
    const JoinTree p = codec.decode(q, e.tokens);
    ASSERT_EQ(codec.encode(q, p), e.tokens);
    ASSERT_TRUE(per_query[e.query].insert(to_text(q, p)).second);
  }
  size_t most = 0;
  for (const auto& [qi, plans] : per_query) most = std::max(most, plans.size());
  EXPECT_GE(most, 3u);
  EXPECT_GE(sizes.size(), 4u);
}

TEST(Corpus, SplitIsRoughlyEightyTwenty) {
  const Schema s = reference_schema();
  const Corpus c = build_corpus(s, 5000, 2);
  const double test = static_cast<double>(c.split(true).size()) / c.entries.size();
  EXPECT_NEAR(test, 0.2, 0.03);
  EXPECT_EQ(c.split(true).size() + c.split(false).size(), c.entries.size());
}

TEST(Corpus, DeterministicPerSeed) {
  const Schema s = reference_schema();
  const PlanCodec codec(SymbolVocab(s), 6);
  std::ostringstream a, b, d;
  build_corpus(s, 500, 9).write(a, s, codec);
  build_corpus(s, 500, 9).write(b, s, codec);
  build_corpus(s, 500, 10).write(d, s, codec);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_NE(a.str(), d.str());
}

TEST(Corpus, TextRoundTrip) {
  const Schema s = reference_schema();
  const PlanCodec codec(SymbolVocab(s), 6);
  const Corpus c = build_corpus(s, 300, 4);
  std::stringstream ss;
  c.write(ss, s, codec);
  const Corpus r = Corpus::read(ss, s, codec);
  ASSERT_EQ(r.entries.size(), c.entries.size());
  ASSERT_EQ(r.queries.size(), c.queries.size());
  for (size_t i = 0; i < c.entries.size(); ++i) {
    EXPECT_EQ(r.entries[i].tokens, c.entries[i].tokens);
    EXPECT_EQ(r.entries[i].test, c.entries[i].test);
    EXPECT_EQ(r.entries[i].query, c.entries[i].query);
  }
  std::ostringstream again;
  r.write(again, s, codec);
  EXPECT_EQ(again.str(), ss.str());
}

TEST(Corpus, ReadRejectsOtherSchema) {
  const Schema s = reference_schema();
  const PlanCodec codec(SymbolVocab(s), 6);
  std::stringstream ss;
  build_corpus(s, 50, 4).write(ss, s, codec);
  const Schema other = generate_schema(6, 0.5, 2, 43);
  EXPECT_THROW(Corpus::read(ss, other, PlanCodec(SymbolVocab(other), 6)), std::invalid_argument);
}

TEST(Corpus, RejectsEmpty) {
  EXPECT_THROW(build_corpus(reference_schema(), 0, 1), std::invalid_argument);
}
