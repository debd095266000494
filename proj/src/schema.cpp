#include "planforge/schema.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "planforge/hash.hpp"
#include "planforge/random.hpp"

namespace planforge {

namespace {

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void expect_token(std::istream& in, const std::string& expected) {
  std::string tok;
  if (!(in >> tok) || tok != expected) {
    throw std::invalid_argument("expected '" + expected + "', got '" + tok + "'");
  }
}

}  // namespace

AliasGraph::AliasGraph(int n_tables, int alias_k, const std::vector<FkEdge>& fk_edges)
    : alias_k_(alias_k) {
  for (int t = 0; t < n_tables; ++t) {
    for (int i = 1; i <= alias_k; ++i) nodes_.push_back({t, i});
  }
  incident_.resize(nodes_.size());
  for (int e = 0; e < static_cast<int>(fk_edges.size()); ++e) {
    const auto& fk = fk_edges[e];
    for (int i = 1; i <= alias_k; ++i) {
      for (int j = 1; j <= alias_k; ++j) {
        int a = node_id({fk.from_table, i});
        int b = node_id({fk.to_table, j});
        if (a > b) std::swap(a, b);
        const int id = static_cast<int>(edges_.size());
        edges_.push_back({a, b, e});
        incident_[a].push_back(id);
        incident_[b].push_back(id);
      }
    }
  }
}

bool AliasGraph::connected() const {
  if (nodes_.empty()) return true;
  std::vector<bool> seen(nodes_.size(), false);
  std::vector<int> stack{0};
  seen[0] = true;
  int count = 1;
  while (!stack.empty()) {
    const int n = stack.back();
    stack.pop_back();
    for (int e : incident_[n]) {
      const int m = edges_[e].a == n ? edges_[e].b : edges_[e].a;
      if (!seen[m]) {
        seen[m] = true;
        ++count;
        stack.push_back(m);
      }
    }
  }
  return count == node_count();
}

void Schema::validate() const {
  if (alias_k < 1) throw std::invalid_argument("alias_k must be >= 1");
  if (tables.empty()) throw std::invalid_argument("schema has no tables");
  std::set<std::string> names;
  for (const auto& t : tables) {
    if (t.row_count < 1) throw std::invalid_argument("table " + t.name + " has row_count < 1");
    if (!names.insert(t.name).second) throw std::invalid_argument("duplicate table " + t.name);
  }
  for (const auto& fk : fk_edges) {
    if (fk.from_table < 0 || fk.from_table >= table_count() || fk.to_table < 0 ||
        fk.to_table >= table_count()) {
      throw std::invalid_argument("fk edge references a missing table");
    }
    if (fk.from_table == fk.to_table) throw std::invalid_argument("fk edge is a self reference");
  }
  // Table-level connectivity; the alias graph of a one-table schema has no edges.
  std::vector<int> parent(tables.size());
  for (size_t i = 0; i < parent.size(); ++i) parent[i] = static_cast<int>(i);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& fk : fk_edges) parent[find(fk.from_table)] = find(fk.to_table);
  for (size_t i = 1; i < tables.size(); ++i) {
    if (find(static_cast<int>(i)) != find(0)) throw std::invalid_argument("schema reference graph is disconnected");
  }
}

int Schema::table_index(const std::string& name) const {
  for (int i = 0; i < table_count(); ++i) {
    if (tables[i].name == name) return i;
  }
  return -1;
}

std::string Schema::alias_name(Alias a) const {
  const auto& base = tables.at(a.table).name;
  return alias_k == 1 ? base : base + "_" + std::to_string(a.index);
}

uint64_t Schema::hash() const {
  std::ostringstream os;
  write(os);
  return fnv1a(os.str());
}

void Schema::write(std::ostream& out) const {
  out << "planforge-schema 1\n";
  out << "seed " << seed << "\n";
  out << "alias_k " << alias_k << "\n";
  for (const auto& t : tables) out << "table " << t.name << ' ' << t.row_count << ' ' << t.pk_column << "\n";
  for (const auto& fk : fk_edges) {
    out << "fk " << tables[fk.from_table].name << ' ' << fk.fk_column << ' ' << tables[fk.to_table].name << "\n";
  }
}

Schema Schema::read(std::istream& in) {
  Schema s;
  expect_token(in, "planforge-schema");
  int version = 0;
  in >> version;
  if (version != 1) throw std::invalid_argument("unsupported schema file version");
  std::string kind;
  while (in >> kind) {
    if (kind == "seed") {
      in >> s.seed;
    } else if (kind == "alias_k") {
      in >> s.alias_k;
    } else if (kind == "table") {
      TableStat t;
      in >> t.name >> t.row_count >> t.pk_column;
      s.tables.push_back(t);
    } else if (kind == "fk") {
      std::string from, col, to;
      in >> from >> col >> to;
      const int f = s.table_index(from);
      const int g = s.table_index(to);
      if (f < 0 || g < 0) throw std::invalid_argument("fk references unknown table");
      s.fk_edges.push_back({f, col, g});
    } else {
      throw std::invalid_argument("unknown schema record '" + kind + "'");
    }
    if (!in) throw std::invalid_argument("malformed schema record '" + kind + "'");
  }
  s.validate();
  return s;
}

void Schema::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write(out);
}

Schema Schema::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open schema file " + path);
  return read(in);
}

Schema generate_schema(int n_tables, double fk_density, int alias_k, uint64_t seed,
                       const SchemaConfig& config) {
  if (n_tables < 2) throw std::invalid_argument("generate_schema: n_tables must be >= 2");
  if (alias_k < 1) throw std::invalid_argument("generate_schema: alias_k must be >= 1");
  if (!(fk_density > 0.0 && fk_density <= 1.0)) {
    throw std::invalid_argument("generate_schema: fk_density must be in (0, 1]");
  }
  Rng rng(seed);
  Schema s;
  s.alias_k = alias_k;
  s.seed = seed;
  for (int i = 0; i < n_tables; ++i) {
    const double lg = rng.uniform(config.min_log10_rows, config.max_log10_rows);
    s.tables.push_back({"t" + std::to_string(i), std::max<int64_t>(1, std::llround(std::pow(10.0, lg))), "id"});
  }
  std::vector<std::vector<bool>> linked(n_tables, std::vector<bool>(n_tables, false));
  auto add_edge = [&](int a, int b) {
    const bool a_refs_b = rng.bernoulli(0.5);
    const int from = a_refs_b ? a : b;
    const int to = a_refs_b ? b : a;
    s.fk_edges.push_back({from, s.tables[to].name + "_id", to});
    linked[a][b] = linked[b][a] = true;
  };
  // Random spanning tree keeps the reference graph connected.
  for (int i = 1; i < n_tables; ++i) add_edge(i, static_cast<int>(rng.uniform_int(i)));
  for (int a = 0; a < n_tables; ++a) {
    for (int b = a + 1; b < n_tables; ++b) {
      if (!linked[a][b] && rng.bernoulli(fk_density)) add_edge(a, b);
    }
  }
  s.validate();
  return s;
}

Schema perturb_statistics(const Schema& schema, double spread, uint64_t seed) {
  Rng rng(seed);
  Schema out = schema;
  for (auto& t : out.tables) {
    const double f = rng.uniform(1.0 - spread, 1.0 + spread);
    t.row_count = std::max<int64_t>(1, std::llround(static_cast<double>(t.row_count) * f));
  }
  return out;
}

Query::Query(const Schema& schema, std::vector<Alias> aliases, std::vector<double> selectivity,
             std::string id)
    : id_(std::move(id)) {
  if (aliases.empty()) throw std::invalid_argument("query needs at least one alias");
  if (aliases.size() != selectivity.size()) throw std::invalid_argument("selectivity count mismatch");
  if (aliases.size() > 31) throw std::invalid_argument("query has too many aliases");
  std::vector<size_t> order(aliases.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t x, size_t y) { return aliases[x] < aliases[y]; });
  for (size_t i : order) {
    const Alias a = aliases[i];
    if (a.table < 0 || a.table >= schema.table_count() || a.index < 1 || a.index > schema.alias_k) {
      throw std::invalid_argument("query alias outside the schema");
    }
    if (!(selectivity[i] > 0.0 && selectivity[i] <= 1.0)) {
      throw std::invalid_argument("selectivity must be in (0, 1]");
    }
    if (!aliases_.empty() && aliases_.back().alias == a) throw std::invalid_argument("duplicate alias in query");
    aliases_.push_back({a, schema.alias_name(a), static_cast<double>(schema.tables[a.table].row_count), selectivity[i]});
  }
  adjacency_.assign(aliases_.size(), 0u);
  const AliasGraph graph = schema.alias_graph();
  for (int e = 0; e < static_cast<int>(graph.edges().size()); ++e) {
    const auto& ae = graph.edges()[e];
    const int la = local_index(graph.node(ae.a));
    const int lb = local_index(graph.node(ae.b));
    if (la < 0 || lb < 0) continue;
    const auto& fk = schema.fk_edges[ae.fk_edge];
    const int pk_local = aliases_[la].alias.table == fk.to_table ? la : lb;
    edges_.push_back({la, lb, pk_local, ae.fk_edge, e, static_cast<double>(schema.tables[fk.to_table].row_count)});
    adjacency_[la] |= 1u << lb;
    adjacency_[lb] |= 1u << la;
  }
  if (!is_connected(all_mask())) throw std::invalid_argument("query join graph is disconnected");
}

int Query::local_index(Alias a) const {
  for (int i = 0; i < size(); ++i) {
    if (aliases_[i].alias == a) return i;
  }
  return -1;
}

int Query::local_index(const std::string& name) const {
  for (int i = 0; i < size(); ++i) {
    if (aliases_[i].name == name) return i;
  }
  return -1;
}

bool Query::is_connected(uint32_t mask) const {
  if (mask == 0) return false;
  uint32_t seen = mask & (~mask + 1);
  uint32_t frontier = seen;
  while (frontier) {
    const int i = std::countr_zero(frontier);
    frontier &= frontier - 1;
    const uint32_t fresh = adjacency_[i] & mask & ~seen;
    seen |= fresh;
    frontier |= fresh;
  }
  return seen == mask;
}

bool Query::has_edge_between(uint32_t left, uint32_t right) const {
  for (uint32_t m = left; m; m &= m - 1) {
    if (adjacency_[std::countr_zero(m)] & right) return true;
  }
  return false;
}

Query Query::rebind(const Schema& schema) const {
  std::vector<Alias> as;
  std::vector<double> sel;
  for (const auto& a : aliases_) {
    as.push_back(a.alias);
    sel.push_back(a.selectivity);
  }
  return Query(schema, std::move(as), std::move(sel), id_);
}

void Query::write(std::ostream& out, const Schema& schema) const {
  out << "planforge-query 1\n";
  out << "id " << id_ << "\n";
  out << "schema_hash " << hex64(schema.hash()) << "\n";
  for (const auto& a : aliases_) {
    out << "alias " << schema.tables[a.alias.table].name << ' ' << a.alias.index << ' '
        << format_double(a.selectivity) << "\n";
  }
}

Query Query::read(std::istream& in, const Schema& schema) {
  expect_token(in, "planforge-query");
  int version = 0;
  in >> version;
  if (version != 1) throw std::invalid_argument("unsupported query file version");
  std::string kind, id;
  std::vector<Alias> as;
  std::vector<double> sel;
  while (in >> kind) {
    if (kind == "id") {
      in >> id;
    } else if (kind == "schema_hash") {
      std::string h;
      in >> h;
      if (h != hex64(schema.hash())) throw std::invalid_argument("query was sampled from a different schema");
    } else if (kind == "alias") {
      std::string table;
      int index = 0;
      double s = 0;
      in >> table >> index >> s;
      const int t = schema.table_index(table);
      if (t < 0) throw std::invalid_argument("query references unknown table " + table);
      as.push_back({t, index});
      sel.push_back(s);
    } else {
      throw std::invalid_argument("unknown query record '" + kind + "'");
    }
    if (!in) throw std::invalid_argument("malformed query record '" + kind + "'");
  }
  return Query(schema, std::move(as), std::move(sel), id);
}

void Query::save(const std::string& path, const Schema& schema) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write(out, schema);
}

Query Query::load(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open query file " + path);
  return read(in, schema);
}

Query sample_query(const Schema& schema, int n_aliases, uint64_t seed, const SchemaConfig& config,
                   std::string id) {
  const AliasGraph graph = schema.alias_graph();
  if (n_aliases < 1 || n_aliases > graph.node_count()) {
    throw std::invalid_argument("sample_query: n_aliases outside [1, alias node count]");
  }
  Rng rng(seed);
  std::vector<int> chosen{static_cast<int>(rng.uniform_int(graph.node_count()))};
  std::vector<bool> in_set(graph.node_count(), false);
  in_set[chosen[0]] = true;
  while (static_cast<int>(chosen.size()) < n_aliases) {
    std::set<int> frontier;
    for (int n : chosen) {
      for (int e : graph.incident(n)) {
        const auto& edge = graph.edges()[e];
        const int m = edge.a == n ? edge.b : edge.a;
        if (!in_set[m]) frontier.insert(m);
      }
    }
    if (frontier.empty()) throw std::runtime_error("sample_query: no connected subgraph of the requested size");
    auto it = frontier.begin();
    std::advance(it, rng.uniform_int(frontier.size()));
    chosen.push_back(*it);
    in_set[*it] = true;
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<Alias> as;
  std::vector<double> sel;
  for (int n : chosen) {
    as.push_back(graph.node(n));
    sel.push_back(rng.uniform(config.min_selectivity, config.max_selectivity));
  }
  if (id.empty()) id = "q" + hex64(seed).substr(8);
  return Query(schema, std::move(as), std::move(sel), std::move(id));
}

}  // namespace planforge
