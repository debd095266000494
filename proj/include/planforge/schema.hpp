#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace planforge {

struct TableStat {
  std::string name;
  int64_t row_count = 1;
  std::string pk_column = "id";
};

/// `from_table.fk_column` references the primary key of `to_table`.
struct FkEdge {
  int from_table = 0;
  std::string fk_column;
  int to_table = 0;
};

/// One node of the alias-k reference graph. `index` is 1-based.
struct Alias {
  int table = 0;
  int index = 1;

  friend bool operator==(const Alias&, const Alias&) = default;
  friend auto operator<=>(const Alias&, const Alias&) = default;
};

struct AliasEdge {
  int a = 0;  // node ids, a < b
  int b = 0;
  int fk_edge = 0;
};

/// k nodes per table; node id = table * k + (index - 1), which is also the
/// order of the alias symbols in the plan vocabulary.
class AliasGraph {
 public:
  AliasGraph(int n_tables, int alias_k, const std::vector<FkEdge>& fk_edges);

  int node_count() const { return static_cast<int>(nodes_.size()); }
  int node_id(Alias a) const { return a.table * alias_k_ + (a.index - 1); }
  const Alias& node(int id) const { return nodes_[id]; }
  const std::vector<Alias>& nodes() const { return nodes_; }
  const std::vector<AliasEdge>& edges() const { return edges_; }
  /// Edge ids incident to a node.
  const std::vector<int>& incident(int node) const { return incident_[node]; }
  bool connected() const;

 private:
  int alias_k_;
  std::vector<Alias> nodes_;
  std::vector<AliasEdge> edges_;
  std::vector<std::vector<int>> incident_;
};

struct SchemaConfig {
  double min_log10_rows = 2.0;
  double max_log10_rows = 6.0;
  double min_selectivity = 0.05;
  double max_selectivity = 1.0;
};

class Schema {
 public:
  std::vector<TableStat> tables;
  std::vector<FkEdge> fk_edges;
  int alias_k = 2;
  uint64_t seed = 0;

  /// Throws std::invalid_argument when an invariant does not hold.
  void validate() const;
  AliasGraph alias_graph() const { return AliasGraph(table_count(), alias_k, fk_edges); }
  int table_count() const { return static_cast<int>(tables.size()); }
  int table_index(const std::string& name) const;  // -1 when absent
  std::string alias_name(Alias a) const;
  /// Fingerprint of the serialized form.
  uint64_t hash() const;

  void write(std::ostream& out) const;
  static Schema read(std::istream& in);
  void save(const std::string& path) const;
  static Schema load(const std::string& path);
};

Schema generate_schema(int n_tables, double fk_density, int alias_k, uint64_t seed,
                       const SchemaConfig& config = {});

/// Scales every table's row count by an independent factor drawn uniformly
/// from [1 - spread, 1 + spread]. Models data drift between snapshots.
Schema perturb_statistics(const Schema& schema, double spread, uint64_t seed);

/// Join predicate between two query-local aliases. `pk_side` is the local
/// index of the alias whose primary key is referenced.
struct JoinEdge {
  int left = 0;
  int right = 0;
  int pk_side = 0;
  int fk_edge = 0;
  int alias_edge = 0;
  double pk_rows = 1.0;

  int other(int local) const { return local == left ? right : left; }
};

struct QueryAlias {
  Alias alias;
  std::string name;
  double base_rows = 1.0;
  double selectivity = 1.0;
};

/// A connected PK-FK join query. Aliases are stored sorted by (table, index),
/// so the local index order agrees with the vocabulary order. Every alias
/// graph edge between two chosen aliases is a join edge of the query.
class Query {
 public:
  Query() = default;
  Query(const Schema& schema, std::vector<Alias> aliases, std::vector<double> selectivity,
        std::string id);

  const std::string& id() const { return id_; }
  int size() const { return static_cast<int>(aliases_.size()); }
  const std::vector<QueryAlias>& aliases() const { return aliases_; }
  const QueryAlias& alias(int local) const { return aliases_[local]; }
  const std::vector<JoinEdge>& edges() const { return edges_; }
  /// Bitmask of local aliases adjacent to `local`.
  uint32_t neighbors(int local) const { return adjacency_[local]; }
  uint32_t all_mask() const { return size() >= 32 ? ~0u : ((1u << size()) - 1u); }
  /// Local index for an alias, -1 when not part of the query.
  int local_index(Alias a) const;
  int local_index(const std::string& name) const;
  bool is_connected(uint32_t mask) const;
  bool has_edge_between(uint32_t left, uint32_t right) const;

  /// Same aliases and selectivities with base statistics from another schema.
  Query rebind(const Schema& schema) const;

  void write(std::ostream& out, const Schema& schema) const;
  static Query read(std::istream& in, const Schema& schema);
  void save(const std::string& path, const Schema& schema) const;
  static Query load(const std::string& path, const Schema& schema);

 private:
  std::string id_;
  std::vector<QueryAlias> aliases_;
  std::vector<JoinEdge> edges_;
  std::vector<uint32_t> adjacency_;
};

/// Grows a connected alias set from a uniformly chosen start node by
/// repeatedly adding a uniformly chosen frontier node.
Query sample_query(const Schema& schema, int n_aliases, uint64_t seed,
                   const SchemaConfig& config = {}, std::string id = {});

}  // namespace planforge
