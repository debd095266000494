#pragma once

#include <optional>
#include <string>
#include <vector>

namespace planforge {

/// One executed plan, keyed by (schema hash, query id, plan text).
struct PlanCacheRecord {
  std::string schema_hash;
  std::string query_id;
  std::string plan_text;
  bool censored = false;
  double seconds = 0.0;  // latency, or the timeout when censored
};

/// Append-only plain-text cache, one tab-separated record per line. Writers
/// hold an exclusive flock on the file while appending; readers a shared one.
class PlanCache {
 public:
  explicit PlanCache(std::string path) : path_(std::move(path)) {}

  const std::string& path() const { return path_; }
  std::vector<PlanCacheRecord> load() const;
  /// Appends records whose key is not present yet. A completed record
  /// replaces an earlier censored one for the same key. Returns the number
  /// of lines written.
  int append(const std::vector<PlanCacheRecord>& records) const;
  /// Latest completed record for the key, if any.
  std::optional<PlanCacheRecord> lookup(const std::string& schema_hash, const std::string& query_id,
                                        const std::string& plan_text) const;

 private:
  std::string path_;
};

}  // namespace planforge
