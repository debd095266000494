#include "planforge/plan_cache.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <map>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace planforge {

namespace {

using Key = std::tuple<std::string, std::string, std::string>;

class LockedFile {
 public:
  LockedFile(const std::string& path, bool write) {
    fd_ = ::open(path.c_str(), write ? (O_RDWR | O_CREAT | O_APPEND) : O_RDONLY, 0644);
    if (fd_ < 0) {
      if (!write && errno == ENOENT) return;
      throw std::runtime_error("plan cache: cannot open " + path + ": " + std::strerror(errno));
    }
    if (::flock(fd_, write ? LOCK_EX : LOCK_SH) != 0) {
      ::close(fd_);
      throw std::runtime_error("plan cache: cannot lock " + path);
    }
  }
  ~LockedFile() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
    }
  }
  LockedFile(const LockedFile&) = delete;
  LockedFile& operator=(const LockedFile&) = delete;

  bool open() const { return fd_ >= 0; }

  std::string read_all() const {
    std::string out;
    char buf[8192];
    ::lseek(fd_, 0, SEEK_SET);
    for (ssize_t n; (n = ::read(fd_, buf, sizeof buf)) > 0;) out.append(buf, n);
    return out;
  }

  void write_all(const std::string& data) const {
    size_t done = 0;
    while (done < data.size()) {
      const ssize_t n = ::write(fd_, data.data() + done, data.size() - done);
      if (n < 0) throw std::runtime_error(std::string("plan cache: write failed: ") + std::strerror(errno));
      done += n;
    }
  }

 private:
  int fd_ = -1;
};

std::vector<PlanCacheRecord> parse(const std::string& text) {
  std::vector<PlanCacheRecord> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    size_t start = 0;
    for (size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1) {
      f.push_back(line.substr(start, tab - start));
    }
    f.push_back(line.substr(start));
    if (f.size() != 5 || (f[2] != "ok" && f[2] != "timeout")) {
      throw std::invalid_argument("plan cache: malformed line " + std::to_string(line_no));
    }
    out.push_back({f[0], f[1], f[4], f[2] == "timeout", std::stod(f[3])});
  }
  return out;
}

void check_field(const std::string& s) {
  if (s.empty() || s.find_first_of("\t\n") != std::string::npos) {
    throw std::invalid_argument("plan cache: field must be non-empty without tabs or newlines");
  }
}

}  // namespace

std::vector<PlanCacheRecord> PlanCache::load() const {
  const LockedFile f(path_, false);
  return f.open() ? parse(f.read_all()) : std::vector<PlanCacheRecord>{};
}

int PlanCache::append(const std::vector<PlanCacheRecord>& records) const {
  const LockedFile f(path_, true);
  std::map<Key, bool> known;  // key -> has a completed record
  for (const auto& r : parse(f.read_all())) {
    bool& done = known[{r.schema_hash, r.query_id, r.plan_text}];
    done = done || !r.censored;
  }
  std::string out;
  int written = 0;
  for (const auto& r : records) {
    check_field(r.schema_hash);
    check_field(r.query_id);
    check_field(r.plan_text);
    const Key k{r.schema_hash, r.query_id, r.plan_text};
    const auto it = known.find(k);
    if (it != known.end() && (it->second || r.censored)) continue;
    known[k] = !r.censored;
    char num[32];
    std::snprintf(num, sizeof num, "%.17g", r.seconds);
    out += r.schema_hash + '\t' + r.query_id + '\t' + (r.censored ? "timeout" : "ok") + '\t' + num + '\t' +
           r.plan_text + '\n';
    ++written;
  }
  f.write_all(out);
  return written;
}

std::optional<PlanCacheRecord> PlanCache::lookup(const std::string& schema_hash, const std::string& query_id,
                                                 const std::string& plan_text) const {
  std::optional<PlanCacheRecord> hit;
  for (auto& r : load()) {
    if (!r.censored && r.schema_hash == schema_hash && r.query_id == query_id && r.plan_text == plan_text) {
      hit = std::move(r);
    }
  }
  return hit;
}

}  // namespace planforge
