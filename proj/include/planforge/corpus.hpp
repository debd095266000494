#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "planforge/codec.hpp"
#include "planforge/executor.hpp"
#include "planforge/schema.hpp"

namespace planforge {

struct CorpusConfig {
  int min_aliases = 2;
  int max_aliases = 6;
  double error_spread = 4.0;
  bool use_hints = true;
  int random_plans_per_query = 8;
  double test_fraction = 0.2;
  CostModelConfig cost;
};

struct CorpusEntry {
  int query = 0;  // index into Corpus::queries
  PlanTokenSeq tokens;
  bool test = false;
};

/// Encoded plans for randomly sampled queries: the default optimizer's plan,
/// its hinted variants and random cross-join-free plans.
struct Corpus {
  std::vector<Query> queries;
  std::vector<CorpusEntry> entries;
  uint64_t seed = 0;
  int max_aliases = 0;

  std::vector<PlanTokenSeq> split(bool test) const;

  void write(std::ostream& out, const Schema& schema, const PlanCodec& codec) const;
  static Corpus read(std::istream& in, const Schema& schema, const PlanCodec& codec);
  void save(const std::string& path, const Schema& schema, const PlanCodec& codec) const;
  static Corpus load(const std::string& path, const Schema& schema, const PlanCodec& codec);
};

Corpus build_corpus(const Schema& schema, int n_plans, uint64_t seed, const CorpusConfig& config = {});

}  // namespace planforge
