#include "planforge/corpus.hpp"

#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include "planforge/classic_opt.hpp"
#include "planforge/hash.hpp"
#include "planforge/random.hpp"

namespace planforge {

std::vector<PlanTokenSeq> Corpus::split(bool test) const {
  std::vector<PlanTokenSeq> out;
  for (const auto& e : entries) {
    if (e.test == test) out.push_back(e.tokens);
  }
  return out;
}

Corpus build_corpus(const Schema& schema, int n_plans, uint64_t seed, const CorpusConfig& config) {
  if (n_plans < 1) throw std::invalid_argument("build_corpus: n_plans must be >= 1");
  const int node_count = schema.table_count() * schema.alias_k;
  const int max_q = std::min(config.max_aliases, node_count);
  const int min_q = std::min(config.min_aliases, max_q);
  const PlanCodec codec(SymbolVocab(schema), std::max(2, config.max_aliases));
  ClassicOptimizerConfig opt;
  opt.cost = config.cost;
  const auto hints = all_hint_sets();

  Rng rng(seed);
  Corpus corpus;
  corpus.seed = seed;
  corpus.max_aliases = codec.max_aliases();
  for (uint64_t qi = 0; static_cast<int>(corpus.entries.size()) < n_plans; ++qi) {
    const int size = min_q + static_cast<int>(rng.uniform_int(max_q - min_q + 1));
    Query q = sample_query(schema, size, derive_seed(seed, 2 * qi), {}, "c" + std::to_string(qi));
    const auto stats = EstimatedStats::distorted(q, config.error_spread, derive_seed(seed, 2 * qi + 1));

    std::vector<JoinTree> plans{optimize_default(q, stats, opt)};
    if (config.use_hints) {
      for (const auto& h : hints) plans.push_back(optimize_hinted(q, stats, h, opt));
    }
    for (int r = 0; r < config.random_plans_per_query; ++r) plans.push_back(random_plan(q, rng.next_u64()));

    std::set<std::string> seen;
    const int qidx = static_cast<int>(corpus.queries.size());
    for (const auto& p : plans) {
      if (static_cast<int>(corpus.entries.size()) >= n_plans) break;
      if (!seen.insert(to_text(q, p)).second) continue;
      corpus.entries.push_back({qidx, codec.encode(q, p), rng.uniform() < config.test_fraction});
    }
    corpus.queries.push_back(std::move(q));
  }
  return corpus;
}

void Corpus::write(std::ostream& out, const Schema& schema, const PlanCodec& codec) const {
  out << "planforge-corpus 1\n";
  out << "schema_hash " << hex64(schema.hash()) << "\n";
  out << "seed " << seed << "\n";
  out << "max_aliases " << max_aliases << "\n";
  out << std::setprecision(17);
  for (const auto& q : queries) {
    out << "query " << q.id() << ' ' << q.size();
    for (const auto& a : q.aliases()) out << ' ' << schema.tables[a.alias.table].name << ' ' << a.alias.index << ' ' << a.selectivity;
    out << "\n";
  }
  for (const auto& e : entries) {
    out << "plan " << e.query << ' ' << (e.test ? "test" : "train") << ' ' << codec.to_text(e.tokens) << "\n";
  }
}

Corpus Corpus::read(std::istream& in, const Schema& schema, const PlanCodec& codec) {
  Corpus c;
  std::string line;
  if (!std::getline(in, line) || line != "planforge-corpus 1") throw std::invalid_argument("not a corpus file");
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "schema_hash") {
      std::string h;
      ls >> h;
      if (h != hex64(schema.hash())) throw std::invalid_argument("corpus was built for a different schema");
    } else if (kind == "seed") {
      ls >> c.seed;
    } else if (kind == "max_aliases") {
      ls >> c.max_aliases;
    } else if (kind == "query") {
      std::string id;
      int n = 0;
      ls >> id >> n;
      std::vector<Alias> as;
      std::vector<double> sel;
      for (int i = 0; i < n; ++i) {
        std::string table;
        Alias a;
        double s = 0;
        ls >> table >> a.index >> s;
        a.table = schema.table_index(table);
        as.push_back(a);
        sel.push_back(s);
      }
      if (!ls) throw std::invalid_argument("malformed corpus query line");
      c.queries.emplace_back(schema, std::move(as), std::move(sel), id);
    } else if (kind == "plan") {
      CorpusEntry e;
      std::string split, rest;
      ls >> e.query >> split;
      std::getline(ls, rest);
      e.test = split == "test";
      e.tokens = codec.parse(rest);
      if (e.query < 0 || e.query >= static_cast<int>(c.queries.size())) throw std::invalid_argument("corpus plan references unknown query");
      if (static_cast<int>(e.tokens.tokens.size()) != codec.sequence_length()) {
        throw std::invalid_argument("corpus plan has the wrong sequence length");
      }
      c.entries.push_back(std::move(e));
    } else if (!kind.empty()) {
      throw std::invalid_argument("unknown corpus record '" + kind + "'");
    }
  }
  return c;
}

void Corpus::save(const std::string& path, const Schema& schema, const PlanCodec& codec) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write(out, schema, codec);
}

Corpus Corpus::load(const std::string& path, const Schema& schema, const PlanCodec& codec) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open corpus file " + path);
  return read(in, schema, codec);
}

}  // namespace planforge
