#include <gtest/gtest.h>

#include <queue>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "planforge/reference.hpp"
#include "planforge/schema.hpp"

using namespace planforge;

namespace {

bool bfs_connected(const Schema& s) {
  std::vector<std::vector<int>> adj(s.table_count());
  for (const auto& fk : s.fk_edges) {
    adj[fk.from_table].push_back(fk.to_table);
    adj[fk.to_table].push_back(fk.from_table);
  }
  std::vector<bool> seen(s.table_count(), false);
  std::queue<int> q;
  q.push(0);
  seen[0] = true;
  int n = 1;
  while (!q.empty()) {
    const int t = q.front();
    q.pop();
    for (int u : adj[t]) {
      if (!seen[u]) {
        seen[u] = true;
        ++n;
        q.push(u);
      }
    }
  }
  return n == s.table_count();
}

bool query_connected(const Query& q) {
  uint32_t seen = 1u, frontier = 1u;
  while (frontier) {
    uint32_t next = 0;
    for (int i = 0; i < q.size(); ++i) {
      if (frontier >> i & 1u) next |= q.neighbors(i);
    }
    frontier = next & ~seen;
    seen |= next;
  }
  return seen == q.all_mask();
}

}  // namespace

TEST(Schema, GeneratedSchemasAreConnectedAndInRange) {
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    const int n = 2 + static_cast<int>(seed % 9);
    const double density = 0.1 + 0.1 * static_cast<double>(seed % 10);
    const Schema s = generate_schema(n, density, 1 + static_cast<int>(seed % 3), seed);
    ASSERT_TRUE(bfs_connected(s)) << "seed " << seed;
    ASSERT_EQ(s.table_count(), n);
    for (const auto& t : s.tables) {
      ASSERT_GE(t.row_count, 100);
      ASSERT_LE(t.row_count, 1000000);
    }
    ASSERT_TRUE(s.alias_graph().connected());
  }
}

TEST(Schema, Deterministic) {
  const Schema a = generate_schema(8, 0.4, 2, 7);
  const Schema b = generate_schema(8, 0.4, 2, 7);
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), generate_schema(8, 0.4, 2, 8).hash());
}

TEST(Schema, RoundTrip) {
  const Schema s = reference_schema();
  std::stringstream ss;
  s.write(ss);
  const Schema r = Schema::read(ss);
  EXPECT_EQ(r.hash(), s.hash());
  EXPECT_EQ(r.table_count(), s.table_count());
  EXPECT_EQ(r.fk_edges.size(), s.fk_edges.size());
}

TEST(Schema, RejectsBadInput) {
  EXPECT_THROW(generate_schema(1, 0.5, 1, 0), std::invalid_argument);
  EXPECT_THROW(generate_schema(4, 0.0, 1, 0), std::invalid_argument);
  Schema s = fixtures::abc_schema();
  s.fk_edges.pop_back();
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(Schema, AliasGraphHasKSquaredEdgesPerReference) {
  const Schema s = generate_schema(5, 0.5, 3, 11);
  const AliasGraph g = s.alias_graph();
  EXPECT_EQ(g.node_count(), 15);
  EXPECT_EQ(g.edges().size(), s.fk_edges.size() * 9);
}

TEST(Schema, SampledQueriesAreConnectedSubgraphs) {
  const Schema s = reference_schema();
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    const int n = 2 + static_cast<int>(seed % 5);
    const Query q = sample_query(s, n, seed);
    ASSERT_EQ(q.size(), n);
    ASSERT_TRUE(query_connected(q)) << "seed " << seed;
    std::set<Alias> uniq;
    for (const auto& a : q.aliases()) {
      uniq.insert(a.alias);
      ASSERT_GE(a.selectivity, 0.05);
      ASSERT_LE(a.selectivity, 1.0);
    }
    ASSERT_EQ(static_cast<int>(uniq.size()), n);
    // Every alias-graph edge between chosen aliases is a join edge.
    size_t expected = 0;
    for (const auto& e : s.alias_graph().edges()) {
      if (q.local_index(s.alias_graph().node(e.a)) >= 0 && q.local_index(s.alias_graph().node(e.b)) >= 0) ++expected;
    }
    ASSERT_EQ(q.edges().size(), expected);
  }
}

TEST(Schema, QueryRoundTripAndRebind) {
  const Schema s = reference_schema();
  const Query q = reference_query(s, 3);
  std::stringstream ss;
  q.write(ss, s);
  const Query r = Query::read(ss, s);
  ASSERT_EQ(r.size(), q.size());
  for (int i = 0; i < q.size(); ++i) {
    EXPECT_EQ(r.alias(i).name, q.alias(i).name);
    EXPECT_DOUBLE_EQ(r.alias(i).selectivity, q.alias(i).selectivity);
  }
  const Schema drift = perturb_statistics(s, 0.2, 5);
  const Query rb = q.rebind(drift);
  for (int i = 0; i < q.size(); ++i) {
    EXPECT_EQ(rb.alias(i).base_rows, drift.tables[q.alias(i).alias.table].row_count);
  }
}

TEST(Schema, PerturbStaysWithinSpread) {
  const Schema s = reference_schema();
  for (uint64_t seed = 0; seed < 50; ++seed) {
    const Schema p = perturb_statistics(s, 0.2, seed);
    for (int t = 0; t < s.table_count(); ++t) {
      const double r = static_cast<double>(p.tables[t].row_count) / s.tables[t].row_count;
      ASSERT_GE(r, 0.8 - 1e-2);
      ASSERT_LE(r, 1.2 + 1e-2);
    }
  }
}
