// planforge: offline query-plan superoptimizer over a simulated engine.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "planforge/bo.hpp"
#include "planforge/classic_opt.hpp"
#include "planforge/codec.hpp"
#include "planforge/corpus.hpp"
#include "planforge/hash.hpp"
#include "planforge/plan_cache.hpp"
#include "planforge/random.hpp"
#include "planforge/reference.hpp"
#include "planforge/report.hpp"
#include "planforge/vae.hpp"

using namespace planforge;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kConfigError = 1, kRuntimeError = 2, kBudgetInfeasible = 3 };

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BudgetInfeasible : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string g_command;

void error_record(const char* kind, const std::string& message) {
  std::cerr << json{{"error", {{"kind", kind}, {"command", g_command}, {"message", message}}}}.dump() << std::endl;
}

// ---------------------------------------------------------------- io

fs::path g_out_flag;

fs::path out_root() {
  if (!g_out_flag.empty()) return g_out_flag;
  if (const char* env = std::getenv("PLANFORGE_OUT"); env && *env) return env;
  return "planforge_out";
}

fs::path output_path(const std::string& explicit_path, const fs::path& default_name) {
  const fs::path p = explicit_path.empty() ? out_root() / default_name : fs::path(explicit_path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  return p;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("missing ") + what + " path");
  if (!fs::is_regular_file(path)) throw ConfigError(std::string(what) + " not found: " + path);
}

template <typename F>
auto load_or_config_error(const std::string& path, const char* what, F&& load) {
  require_file(path, what);
  try {
    return load();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid ") + what + " " + path + ": " + e.what());
  }
}

Schema load_schema(const std::string& path) {
  return load_or_config_error(path, "schema", [&] { return Schema::load(path); });
}

Query load_query(const std::string& path, const Schema& s) {
  return load_or_config_error(path, "query", [&] { return Query::load(path, s); });
}

VaeModel load_vae(const std::string& path) {
  return load_or_config_error(path, "vae checkpoint", [&] { return VaeModel::load(path); });
}

void write_text(const fs::path& p, const std::string& data) {
  std::ofstream out(p, std::ios::binary);
  out << data;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

/// Provenance block embedded in every artifact.
struct Provenance {
  std::string schema_hash;
  std::string config_hash;
  uint64_t seed = 0;

  json to_json() const { return {{"schema_hash", schema_hash}, {"config_hash", config_hash}, {"seed", seed}}; }
  std::string csv_comment() const {
    return "# schema_hash=" + schema_hash + " config_hash=" + config_hash + " seed=" + std::to_string(seed) + "\n";
  }
};

Provenance provenance(const Schema& s, const json& config, uint64_t seed) {
  return {hex64(s.hash()), hex64(fnv1a(config.dump())), seed};
}

/// Sidecar for artifacts whose own format has no room for provenance.
void write_meta(const fs::path& artifact, const Provenance& p, const json& config) {
  json m = p.to_json();
  m["artifact"] = artifact.filename().string();
  m["command"] = g_command;
  m["config"] = config;
  write_text(artifact.string() + ".meta.json", m.dump(2) + "\n");
}

// ---------------------------------------------------------------- records

json trace_row_json(const TraceRow& r) {
  json j{{"type", "step"},
         {"step", r.step},
         {"kind", trace_kind_name(r.kind)},
         {"plan", r.plan_text},
         {"cache_hit", r.cache_hit},
         {"censored", r.censored},
         {"timeout_s", r.timeout_s},
         {"latency_s", r.latency_s ? json(*r.latency_s) : json(nullptr)},
         {"charge_s", r.charge_s},
         {"spent_s", r.spent_s},
         {"executions", r.executions},
         {"best_latency_s", r.best_latency_s ? json(*r.best_latency_s) : json(nullptr)},
         {"tr_length", r.tr_length},
         {"timeout_search_iterations", r.timeout_search_iterations}};
  return j;
}

json summary_json(const OptimizationReport& rep, const Provenance& p, std::optional<double> hints49_best) {
  json j = p.to_json();
  j["type"] = "summary";
  j["query_id"] = rep.query_id;
  j["method"] = rep.method;
  j["best_plan_text"] = rep.best_plan_text;
  j["best_latency_s"] = rep.best_latency_s ? json(*rep.best_latency_s) : json(nullptr);
  j["n_evals"] = rep.executions;
  j["spent_s"] = rep.spent_s;
  j["budget_s"] = rep.budget_s;
  j["iterations"] = rep.iterations;
  j["stop_reason"] = rep.stop_reason;
  j["warnings"] = rep.warnings;
  j["hints49_best_s"] = hints49_best ? json(*hints49_best) : json(nullptr);
  return j;
}

void write_run(const fs::path& dir, const OptimizationReport& rep, const Provenance& p, const json& config,
               std::optional<double> hints49_best, const std::string& cache_path) {
  fs::create_directories(dir);
  std::string trace;
  json header = p.to_json();
  header["type"] = "header";
  header["command"] = g_command;
  header["query_id"] = rep.query_id;
  header["method"] = rep.method;
  header["config"] = config;
  trace += header.dump() + "\n";
  for (const auto& r : rep.trace) trace += trace_row_json(r).dump() + "\n";
  const json summary = summary_json(rep, p, hints49_best);
  trace += summary.dump() + "\n";
  write_text(dir / "trace.jsonl", trace);
  write_text(dir / "summary.json", summary.dump(2) + "\n");

  std::vector<PlanCacheRecord> records;
  for (const auto& r : rep.trace) {
    if (r.cache_hit) continue;
    records.push_back({p.schema_hash, rep.query_id, r.plan_text, r.censored, r.censored ? r.timeout_s : *r.latency_s});
  }
  const fs::path cache = cache_path.empty() ? out_root() / "plan_cache.txt" : fs::path(cache_path);
  if (cache.has_parent_path()) fs::create_directories(cache.parent_path());
  PlanCache(cache.string()).append(records);

  std::cout << summary.dump() << std::endl;
}

// ---------------------------------------------------------------- shared options

struct StatsOptions {
  double error_spread = kReferenceErrorSpread;
  std::optional<uint64_t> distortion_seed;

  void add(CLI::App* c) {
    c->add_option("--error-spread", error_spread, "Estimator distortion spread s (1 = truthful)")->check(CLI::PositiveNumber);
    c->add_option("--distortion-seed", distortion_seed, "Estimator distortion seed (default: 1000 + --seed)");
  }
  EstimatedStats stats(const Query& q, uint64_t seed) const {
    return EstimatedStats::distorted(q, error_spread, distortion_seed.value_or(reference_distortion_seed(seed)));
  }
  json to_json(uint64_t seed) const {
    return {{"error_spread", error_spread}, {"distortion_seed", distortion_seed.value_or(reference_distortion_seed(seed))}};
  }
};

struct ExecOptions {
  double noise_sigma = 0.0;
  void add(CLI::App* c) {
    c->add_option("--noise-sigma", noise_sigma, "Lognormal latency noise (0 = deterministic)")->check(CLI::NonNegativeNumber);
  }
  SimulatedExecutor executor() const {
    CostModelConfig c;
    c.noise_sigma = noise_sigma;
    return SimulatedExecutor(c);
  }
};

// ---------------------------------------------------------------- schema / query / oracle

struct SchemaGen {
  int tables = kReferenceTables;
  double density = kReferenceFkDensity;
  int alias_k = kReferenceAliasK;
  uint64_t seed = kReferenceSchemaSeed;
  std::string out;

  void run() const {
    const Schema s = generate_schema(tables, density, alias_k, seed);
    const fs::path p = output_path(out, "schema.txt");
    s.save(p.string());
    const json cfg{{"tables", tables}, {"fk_density", density}, {"alias_k", alias_k}};
    write_meta(p, provenance(s, cfg, seed), cfg);
    std::cout << json{{"schema", p.string()}, {"schema_hash", hex64(s.hash())}}.dump() << std::endl;
  }
};

struct QuerySample {
  std::string schema;
  int aliases = kReferenceQueryAliases;
  uint64_t seed = 0;
  std::string id, out;

  void run() const {
    const Schema s = load_schema(schema);
    if (aliases < 2 || aliases > 2 * s.table_count() * s.alias_k) throw ConfigError("--aliases out of range");
    const Query q = sample_query(s, aliases, seed, {}, id);
    const fs::path p = output_path(out, "query_" + q.id() + ".txt");
    q.save(p.string(), s);
    const json cfg{{"aliases", aliases}, {"id", q.id()}};
    write_meta(p, provenance(s, cfg, seed), cfg);
    std::cout << json{{"query", p.string()}, {"query_id", q.id()}}.dump() << std::endl;
  }
};

struct Oracle {
  std::string schema, query, out;

  void run() const {
    const Schema s = load_schema(schema);
    const Query q = load_query(query, s);
    if (q.size() > kDefaultEnumerationCap) throw ConfigError("query exceeds the enumeration cap");
    const OraclePlan o = brute_force_optimum(q);
    const json cfg{{"query_id", q.id()}, {"cap", kDefaultEnumerationCap}};
    json j = provenance(s, cfg, 0).to_json();
    j["query_id"] = q.id();
    j["plan_text"] = to_text(q, o.plan);
    j["latency_s"] = o.latency_s;
    j["plan_count"] = plan_space_size(q.size());
    write_text(output_path(out, "oracle_" + q.id() + ".json"), j.dump(2) + "\n");
    std::cout << j.dump() << std::endl;
  }
};

// ---------------------------------------------------------------- corpus / vae

struct CorpusBuild {
  std::string schema, out;
  int plans = 50000;
  uint64_t seed = 1;
  CorpusConfig cfg;

  json config() const {
    return {{"plans", plans},
            {"min_aliases", cfg.min_aliases},
            {"max_aliases", cfg.max_aliases},
            {"error_spread", cfg.error_spread},
            {"use_hints", cfg.use_hints},
            {"random_plans_per_query", cfg.random_plans_per_query},
            {"test_fraction", cfg.test_fraction}};
  }
  void run() const {
    const Schema s = load_schema(schema);
    if (plans <= 0) throw ConfigError("--plans must be positive");
    if (cfg.min_aliases < 2 || cfg.max_aliases < cfg.min_aliases) throw ConfigError("bad alias range");
    const Corpus c = build_corpus(s, plans, seed, cfg);
    const fs::path p = output_path(out, "corpus.txt");
    c.save(p.string(), s, PlanCodec(SymbolVocab(s), c.max_aliases));
    write_meta(p, provenance(s, config(), seed), config());
    std::cout << json{{"corpus", p.string()},
                      {"plans", c.entries.size()},
                      {"test_plans", c.split(true).size()},
                      {"queries", c.queries.size()}}
                     .dump()
              << std::endl;
  }
};

Corpus load_corpus(const std::string& path, const Schema& s) {
  require_file(path, "corpus");
  std::ifstream in(path);
  std::string line;
  int max_aliases = 0;
  while (std::getline(in, line)) {
    if (line.rfind("max_aliases ", 0) == 0) {
      max_aliases = std::stoi(line.substr(12));
      break;
    }
  }
  if (max_aliases < 2) throw ConfigError("corpus has no max_aliases record: " + path);
  return load_or_config_error(path, "corpus",
                              [&] { return Corpus::load(path, s, PlanCodec(SymbolVocab(s), max_aliases)); });
}

struct VaeTrain {
  std::string schema, corpus, out, curve;
  uint64_t seed = 3;
  std::string activation = "tanh";
  VaeConfig cfg;

  json config() const {
    return {{"latent_dim", cfg.latent_dim},     {"hidden", cfg.hidden},
            {"activation", activation},         {"batch_size", cfg.batch_size},
            {"steps", cfg.steps},               {"learning_rate", cfg.learning_rate},
            {"kl_weight", cfg.kl_weight},       {"kl_anneal_fraction", cfg.kl_anneal_fraction},
            {"eval_every", cfg.eval_every}};
  }
  void run() {
    const Schema s = load_schema(schema);
    const Corpus c = load_corpus(corpus, s);
    try {
      cfg.activation = parse_activation(activation);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    const VaeTrainResult r = train_vae(c, SymbolVocab(s), cfg, seed);
    const Provenance prov = provenance(s, config(), seed);
    const fs::path p = output_path(out, "vae.bin");
    r.model.save(p.string());
    write_meta(p, prov, config());
    std::ostringstream csv;
    csv << prov.csv_comment();
    write_curve_csv(csv, r.curve);
    const fs::path cp = output_path(curve, "vae_curve.csv");
    write_text(cp, csv.str());
    const auto& last = r.curve.back();
    std::cout << json{{"vae", p.string()},
                      {"curve", cp.string()},
                      {"train_accuracy", last.train_accuracy},
                      {"test_accuracy", last.test_accuracy}}
                     .dump()
              << std::endl;
  }
};

struct VaeEval {
  std::string schema, corpus, vae, out;

  void run() const {
    const Schema s = load_schema(schema);
    const Corpus c = load_corpus(corpus, s);
    const VaeModel m = load_vae(vae);
    if (m.vocab_hash() != SymbolVocab(s).hash()) throw ConfigError("vae checkpoint was trained on another schema");
    const json cfg{{"vae", fs::path(vae).filename().string()}, {"corpus_seed", c.seed}};
    json j = provenance(s, cfg, m.seed()).to_json();
    j["train_accuracy"] = reconstruction_accuracy(m, c.split(false));
    j["test_accuracy"] = reconstruction_accuracy(m, c.split(true));
    j["latent_dim"] = m.latent_dim();
    write_text(output_path(out, "vae_eval.json"), j.dump(2) + "\n");
    std::cout << j.dump() << std::endl;
  }
};

// ---------------------------------------------------------------- hints / optimize / baseline

struct HintsRun {
  std::string schema, query, out;
  uint64_t seed = 0;
  StatsOptions stats;
  ExecOptions exec;

  void run() const {
    const Schema s = load_schema(schema);
    const Query q = load_query(query, s);
    const EstimatedStats e = stats.stats(q, seed);
    const SimulatedExecutor ex = exec.executor();
    json cfg = stats.to_json(seed);
    cfg["noise_sigma"] = exec.noise_sigma;
    cfg["query_id"] = q.id();
    const Provenance prov = provenance(s, cfg, seed);
    json header = prov.to_json();
    header["type"] = "header";
    header["command"] = g_command;
    header["query_id"] = q.id();
    header["method"] = "hints49";
    header["config"] = cfg;
    std::string text = header.dump() + "\n";
    const auto hints = all_hint_sets();
    double best = INFINITY;
    std::string best_text;
    for (size_t i = 0; i < hints.size(); ++i) {
      const JoinTree p = optimize_hinted(q, e, hints[i]);
      const double lat = ex.latency(q, p, derive_seed(seed, i));
      const std::string pt = to_text(q, p);
      if (lat < best) {
        best = lat;
        best_text = pt;
      }
      text += json{{"type", "hint"}, {"hint", hints[i].label()}, {"plan_text", pt}, {"latency_s", lat}}.dump() + "\n";
    }
    json summary = prov.to_json();
    summary.update({{"type", "summary"},
                    {"query_id", q.id()},
                    {"method", "hints49"},
                    {"best_plan_text", best_text},
                    {"best_latency_s", best},
                    {"n_evals", hints.size()},
                    {"hints49_best_s", best}});
    text += summary.dump() + "\n";
    write_text(output_path(out, "hints_" + q.id() + ".jsonl"), text);
    std::cout << summary.dump() << std::endl;
  }
};

struct RunOptions {
  std::string schema, query, name, cache;
  double budget = 0.0;
  int max_executions = 0;
  uint64_t seed = 0;
  std::optional<double> target;
  double tau_cap = 1e4;
  StatsOptions stats;
  ExecOptions exec;

  void add(CLI::App* c) {
    c->add_option("--schema", schema, "Schema file")->required();
    c->add_option("--query", query, "Query file")->required();
    c->add_option("--budget", budget, "Budget B in simulated seconds")->required();
    c->add_option("--max-executions", max_executions, "Cap on executions including init (0 = none)")
        ->check(CLI::NonNegativeNumber);
    c->add_option("--seed", seed, "Run seed");
    c->add_option("--target", target, "Stop once the incumbent latency is at or below this");
    c->add_option("--tau-cap", tau_cap, "Global timeout cap in seconds")->check(CLI::PositiveNumber);
    c->add_option("--name", name, "Run directory name under the output root");
    c->add_option("--cache", cache, "Plan cache file (default: <out>/plan_cache.txt)");
    stats.add(c);
    exec.add(c);
  }
  void validate() const {
    if (!(budget > 0.0)) throw ConfigError("--budget must be positive");
  }
  json to_json() const {
    json j = stats.to_json(seed);
    j.update({{"budget_s", budget},
              {"max_executions", max_executions},
              {"target_s", target ? json(*target) : json(nullptr)},
              {"tau_cap_s", tau_cap},
              {"noise_sigma", exec.noise_sigma}});
    return j;
  }
};

std::vector<JoinTree> read_warmstart_plans(const std::string& path, const Query& q) {
  require_file(path, "warm-start file");
  std::ifstream in(path);
  std::vector<JoinTree> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::string text = line.substr(first);
    if (text[0] == '{') {
      const json j = json::parse(text, nullptr, false);
      if (j.is_discarded()) throw ConfigError("warm-start file has a malformed JSON line");
      if (j.contains("query_id") && j["query_id"] != q.id()) continue;
      if (j.contains("best_plan_text") && j["best_plan_text"].is_string()) {
        text = j["best_plan_text"].get<std::string>();
      } else if (j.contains("plan_text") && j["plan_text"].is_string()) {
        text = j["plan_text"].get<std::string>();
      } else {
        continue;
      }
      if (text.empty()) continue;
    }
    try {
      out.push_back(parse_plan(q, text));
    } catch (const std::invalid_argument& e) {
      throw ConfigError("warm-start plan does not fit the query: " + text);
    }
  }
  if (out.empty()) throw ConfigError("warm-start file has no plans for query " + q.id());
  return out;
}

struct Optimize {
  RunOptions run_opts;
  std::string vae, init = "hints49";
  BoConfig bo;

  json config() const {
    json j = run_opts.to_json();
    j.update({{"init", init},
              {"vae", fs::path(vae).filename().string()},
              {"kappa", bo.kappa},
              {"n_candidates", bo.candidates.n_candidates},
              {"inducing_points", bo.surrogate.inducing_points},
              {"fit_iterations", bo.surrogate.fit_iterations},
              {"max_iterations", bo.max_iterations}});
    return j;
  }

  std::vector<JoinTree> init_plans(const Query& q, const EstimatedStats& e) const {
    if (init == "hints49") return hints49_plans(q, e);
    if (init == "default") return {optimize_default(q, e)};
    if (init.rfind("random-", 0) == 0) {
      int n = 0;
      try {
        n = std::stoi(init.substr(7));
      } catch (const std::exception&) {
      }
      if (n < 1) throw ConfigError("random-n needs a positive n: " + init);
      std::vector<JoinTree> plans;
      for (int i = 0; i < n; ++i) plans.push_back(random_plan(q, derive_seed(run_opts.seed, 1000 + i)));
      return plans;
    }
    if (init.rfind("warmstart:", 0) == 0) {
      auto plans = hints49_plans(q, e);
      for (auto& p : read_warmstart_plans(init.substr(10), q)) plans.push_back(std::move(p));
      return plans;
    }
    throw ConfigError("unknown init strategy '" + init + "' (hints49, default, random-n, warmstart:file)");
  }

  int run() {
    run_opts.validate();
    const Schema s = load_schema(run_opts.schema);
    const Query q = load_query(run_opts.query, s);
    const VaeModel m = load_vae(vae);
    const SymbolVocab vocab(s);
    if (m.vocab_hash() != vocab.hash()) throw ConfigError("vae checkpoint was trained on another schema");
    const PlanCodec codec(vocab, m.seq_len() / 3 + 1);
    if (q.size() > codec.max_aliases()) throw ConfigError("query has more aliases than the vae supports");
    const EstimatedStats e = run_opts.stats.stats(q, run_opts.seed);
    const SimulatedExecutor ex = run_opts.exec.executor();
    const auto plans = init_plans(q, e);
    const auto init_entries = execute_init(q, plans, ex, run_opts.tau_cap, run_opts.seed);
    bo.max_executions = run_opts.max_executions;
    bo.target_latency_s = run_opts.target;
    bo.tau_cap_s = run_opts.tau_cap;
    const OptimizationReport rep = run_optimization(q, m, codec, ex, init_entries, run_opts.budget, bo, run_opts.seed);
    std::optional<double> hints_best;
    if (init == "hints49") {
      for (const auto& en : init_entries) {
        if (!en.result.censored) hints_best = std::min(hints_best.value_or(INFINITY), *en.result.latency_s);
      }
    }
    const std::string name =
        run_opts.name.empty() ? "optimize_" + q.id() + "_s" + std::to_string(run_opts.seed) : run_opts.name;
    write_run(out_root() / name, rep, provenance(s, config(), run_opts.seed), config(), hints_best, run_opts.cache);
    if (rep.stop_reason == "budget_infeasible") {
      throw BudgetInfeasible("init executions cost " + std::to_string(rep.spent_s) + " s, budget is " +
                             std::to_string(run_opts.budget) + " s");
    }
    return kOk;
  }
};

struct BaselineRandom {
  RunOptions run_opts;
  int max_iterations = 100000;

  int run() const {
    run_opts.validate();
    const Schema s = load_schema(run_opts.schema);
    const Query q = load_query(run_opts.query, s);
    const EstimatedStats e = run_opts.stats.stats(q, run_opts.seed);
    RandomSearchConfig rc;
    rc.max_executions = run_opts.max_executions;
    rc.max_iterations = max_iterations;
    rc.tau_cap_s = run_opts.tau_cap;
    rc.target_latency_s = run_opts.target;
    json cfg = run_opts.to_json();
    cfg["max_iterations"] = max_iterations;
    const OptimizationReport rep =
        random_search(q, optimize_default(q, e), run_opts.exec.executor(), run_opts.budget, rc, run_opts.seed);
    const std::string name =
        run_opts.name.empty() ? "random_" + q.id() + "_s" + std::to_string(run_opts.seed) : run_opts.name;
    write_run(out_root() / name, rep, provenance(s, cfg, run_opts.seed), cfg, std::nullopt, run_opts.cache);
    return kOk;
  }
};

// ---------------------------------------------------------------- report

struct RunRecord {
  std::string source, query_id, method, schema_hash;
  double best_s = 0.0;
  std::optional<double> hints49_best_s;
};

/// Accepts summary.json, trace.jsonl and hints JSONL files.
RunRecord read_run_record(const std::string& path) {
  require_file(path, "trace");
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  json summary = json::parse(buf.str(), nullptr, false);
  if (summary.is_discarded()) {
    summary = nullptr;
    std::istringstream lines(buf.str());
    std::string line;
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line, nullptr, false);
      if (j.is_discarded()) throw ConfigError("malformed JSON line in " + path);
      if (j.value("type", "") == "summary") summary = j;
    }
  }
  if (!summary.is_object() || !summary.contains("query_id") || !summary.contains("schema_hash")) {
    throw ConfigError("no summary record in " + path);
  }
  if (!summary["best_latency_s"].is_number()) throw ConfigError("run without a completed plan: " + path);
  RunRecord r{path, summary["query_id"], summary.value("method", "unknown"), summary["schema_hash"],
              summary["best_latency_s"].get<double>(), std::nullopt};
  if (summary.contains("hints49_best_s") && summary["hints49_best_s"].is_number()) {
    r.hints49_best_s = summary["hints49_best_s"].get<double>();
  }
  return r;
}

struct Report {
  std::vector<std::string> inputs;
  std::string out;
  std::vector<double> thresholds;

  void run() const {
    if (inputs.empty()) throw ConfigError("report needs at least one trace");
    std::vector<RunRecord> runs;
    for (const auto& p : inputs) runs.push_back(read_run_record(p));
    for (const auto& r : runs) {
      if (r.schema_hash != runs.front().schema_hash) {
        throw ConfigError("schema hash mismatch: " + r.source + " has " + r.schema_hash + ", " +
                          runs.front().source + " has " + runs.front().schema_hash);
      }
    }
    std::map<std::string, double> baseline;
    for (const auto& r : runs) {
      if (r.hints49_best_s) {
        auto [it, fresh] = baseline.emplace(r.query_id, *r.hints49_best_s);
        if (!fresh) it->second = std::min(it->second, *r.hints49_best_s);
      }
    }
    // method -> query -> best over that method's runs
    std::map<std::string, std::map<std::string, double>> best;
    for (const auto& r : runs) {
      if (!baseline.count(r.query_id)) throw ConfigError("no hints49 baseline for query " + r.query_id);
      auto [it, fresh] = best[r.method].emplace(r.query_id, r.best_s);
      if (!fresh) it->second = std::min(it->second, r.best_s);
    }
    json cfg = json::array();
    for (const auto& p : inputs) cfg.push_back(fs::path(p).filename().string());
    Provenance prov{runs.front().schema_hash, hex64(fnv1a(cfg.dump())), 0};

    std::ostringstream table;
    table << prov.csv_comment() << "query_id,method,best_latency_s,hints49_best_s,improvement_pct\n";
    table.precision(10);
    std::map<std::string, std::vector<double>> impr;
    for (const auto& [method, per_query] : best) {
      for (const auto& [qid, lat] : per_query) {
        const double v = improvement_percent(baseline.at(qid), lat);
        impr[method].push_back(v);
        table << qid << ',' << method << ',' << lat << ',' << baseline.at(qid) << ',' << v << "\n";
      }
    }
    const auto th = thresholds.empty() ? default_cdf_thresholds() : thresholds;
    std::ostringstream cdf;
    cdf << prov.csv_comment() << "threshold_pct";
    std::map<std::string, std::vector<CdfPoint>> curves;
    for (const auto& [method, v] : impr) {
      cdf << ',' << method;
      curves[method] = improvement_cdf(v, th);
    }
    cdf << "\n";
    for (size_t i = 0; i < th.size(); ++i) {
      cdf << th[i];
      for (const auto& [method, c] : curves) cdf << ',' << c[i].fraction;
      cdf << "\n";
    }
    const fs::path dir = out.empty() ? out_root() / "report" : fs::path(out);
    fs::create_directories(dir);
    write_text(dir / "improvement.csv", table.str());
    write_text(dir / "cdf.csv", cdf.str());
    json medians;
    for (auto [method, v] : impr) {
      std::sort(v.begin(), v.end());
      const size_t n = v.size();
      medians[method] = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    }
    std::cout << json{{"report", dir.string()}, {"median_improvement_pct", medians}}.dump() << std::endl;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"planforge: offline query-plan superoptimizer over a simulated engine"};
  app.require_subcommand(1);
  std::string out_flag;
  app.add_option("--out", out_flag, "Output root (default: $PLANFORGE_OUT or ./planforge_out)");

  auto* schema_cmd = app.add_subcommand("schema", "Schema generation")->require_subcommand(1);
  SchemaGen schema_gen;
  auto* sg = schema_cmd->add_subcommand("gen", "Generate a random FK schema");
  sg->add_option("--tables", schema_gen.tables, "Number of tables")->check(CLI::Range(2, 64));
  sg->add_option("--fk-density", schema_gen.density, "FK edge density in (0, 1]");
  sg->add_option("--alias-k", schema_gen.alias_k, "Aliases per table")->check(CLI::Range(1, 8));
  sg->add_option("--seed", schema_gen.seed, "Seed");
  sg->add_option("-o,--output", schema_gen.out, "Output file (default: <out>/schema.txt)");

  auto* query_cmd = app.add_subcommand("query", "Query sampling")->require_subcommand(1);
  QuerySample query_sample;
  auto* qs = query_cmd->add_subcommand("sample", "Sample a connected join query");
  qs->add_option("--schema", query_sample.schema, "Schema file")->required();
  qs->add_option("--aliases", query_sample.aliases, "Number of aliases");
  qs->add_option("--seed", query_sample.seed, "Seed");
  qs->add_option("--id", query_sample.id, "Query id");
  qs->add_option("-o,--output", query_sample.out, "Output file");

  auto* corpus_cmd = app.add_subcommand("corpus", "Plan corpus")->require_subcommand(1);
  CorpusBuild corpus_build;
  auto* cb = corpus_cmd->add_subcommand("build", "Build the VAE training corpus");
  cb->add_option("--schema", corpus_build.schema, "Schema file")->required();
  cb->add_option("--plans", corpus_build.plans, "Number of plans");
  cb->add_option("--seed", corpus_build.seed, "Seed");
  cb->add_option("--min-aliases", corpus_build.cfg.min_aliases, "Smallest query size");
  cb->add_option("--max-aliases", corpus_build.cfg.max_aliases, "Largest query size (sets the codec length)");
  cb->add_option("--error-spread", corpus_build.cfg.error_spread, "Estimator distortion spread");
  cb->add_option("--random-per-query", corpus_build.cfg.random_plans_per_query, "Random plans per query");
  cb->add_option("--test-fraction", corpus_build.cfg.test_fraction, "Held-out share")->check(CLI::Range(0.0, 0.9));
  cb->add_flag("!--no-hints", corpus_build.cfg.use_hints, "Skip hinted plans");
  cb->add_option("-o,--output", corpus_build.out, "Output file");

  auto* vae_cmd = app.add_subcommand("vae", "Plan VAE")->require_subcommand(1);
  VaeTrain vae_train;
  auto* vt = vae_cmd->add_subcommand("train", "Train the VAE");
  vt->add_option("--schema", vae_train.schema, "Schema file")->required();
  vt->add_option("--corpus", vae_train.corpus, "Corpus file")->required();
  vt->add_option("--latent", vae_train.cfg.latent_dim, "Latent dimension")->check(CLI::Range(1, 512));
  vt->add_option("--hidden", vae_train.cfg.hidden, "Hidden width")->check(CLI::Range(1, 4096));
  vt->add_option("--activation", vae_train.activation, "tanh or relu");
  vt->add_option("--steps", vae_train.cfg.steps, "Optimizer steps")->check(CLI::PositiveNumber);
  vt->add_option("--batch", vae_train.cfg.batch_size, "Batch size")->check(CLI::PositiveNumber);
  vt->add_option("--lr", vae_train.cfg.learning_rate, "Adam learning rate")->check(CLI::PositiveNumber);
  vt->add_option("--kl-weight", vae_train.cfg.kl_weight, "Final KL weight")->check(CLI::NonNegativeNumber);
  vt->add_option("--eval-every", vae_train.cfg.eval_every, "Steps between evaluations (0 = per epoch)");
  vt->add_option("--seed", vae_train.seed, "Seed");
  vt->add_option("-o,--output", vae_train.out, "Checkpoint file");
  vt->add_option("--curve", vae_train.curve, "Training curve CSV");
  VaeEval vae_eval;
  auto* ve = vae_cmd->add_subcommand("eval", "Reconstruction accuracy of a checkpoint");
  ve->add_option("--schema", vae_eval.schema, "Schema file")->required();
  ve->add_option("--corpus", vae_eval.corpus, "Corpus file")->required();
  ve->add_option("--vae", vae_eval.vae, "Checkpoint")->required();
  ve->add_option("-o,--output", vae_eval.out, "Output JSON");

  auto* hints_cmd = app.add_subcommand("hints", "Hint-set initialization")->require_subcommand(1);
  HintsRun hints_run;
  auto* hr = hints_cmd->add_subcommand("run", "Execute the 49 hinted plans");
  hr->add_option("--schema", hints_run.schema, "Schema file")->required();
  hr->add_option("--query", hints_run.query, "Query file")->required();
  hr->add_option("--seed", hints_run.seed, "Seed");
  hr->add_option("-o,--output", hints_run.out, "Output JSONL");
  hints_run.stats.add(hr);
  hints_run.exec.add(hr);

  Optimize optimize;
  auto* op = app.add_subcommand("optimize", "Latent-space BO with censored executions");
  optimize.run_opts.add(op);
  op->add_option("--vae", optimize.vae, "VAE checkpoint")->required();
  op->add_option("--init", optimize.init, "hints49 | default | random-n | warmstart:file");
  op->add_option("--kappa", optimize.bo.kappa, "LCB width in the timeout rule")->check(CLI::NonNegativeNumber);
  op->add_option("--candidates", optimize.bo.candidates.n_candidates, "Thompson candidates per step")
      ->check(CLI::PositiveNumber);
  op->add_option("--inducing", optimize.bo.surrogate.inducing_points, "Inducing points")->check(CLI::PositiveNumber);
  op->add_option("--fit-iterations", optimize.bo.surrogate.fit_iterations, "Surrogate fit iterations")
      ->check(CLI::PositiveNumber);
  op->add_option("--max-iterations", optimize.bo.max_iterations, "BO iteration cap")->check(CLI::PositiveNumber);

  auto* baseline_cmd = app.add_subcommand("baseline", "Baselines")->require_subcommand(1);
  BaselineRandom baseline_random;
  auto* br = baseline_cmd->add_subcommand("random", "Random cross-join-free plans up to the budget");
  baseline_random.run_opts.add(br);
  br->add_option("--max-iterations", baseline_random.max_iterations, "Iteration cap")->check(CLI::PositiveNumber);

  Oracle oracle;
  auto* orc = app.add_subcommand("oracle", "Brute-force optimum of a query");
  orc->add_option("--schema", oracle.schema, "Schema file")->required();
  orc->add_option("--query", oracle.query, "Query file")->required();
  orc->add_option("-o,--output", oracle.out, "Output JSON");

  Report report;
  auto* rp = app.add_subcommand("report", "Improvement over hints49 per query, plus its CDF");
  rp->add_option("traces", report.inputs, "summary.json, trace.jsonl or hints JSONL files")->required();
  rp->add_option("-o,--output", report.out, "Output directory (default: <out>/report)");
  rp->add_option("--thresholds", report.thresholds, "CDF thresholds in percent");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    error_record("config_error", e.what());
    return kConfigError;
  }
  g_out_flag = out_flag;
  for (auto* c = app.get_subcommands().front(); c; c = c->get_subcommands().empty() ? nullptr : c->get_subcommands().front()) {
    g_command += (g_command.empty() ? "" : " ") + c->get_name();
  }

  try {
    if (sg->parsed()) schema_gen.run();
    if (qs->parsed()) query_sample.run();
    if (cb->parsed()) corpus_build.run();
    if (vt->parsed()) vae_train.run();
    if (ve->parsed()) vae_eval.run();
    if (hr->parsed()) hints_run.run();
    if (op->parsed()) return optimize.run();
    if (br->parsed()) return baseline_random.run();
    if (orc->parsed()) oracle.run();
    if (rp->parsed()) report.run();
  } catch (const ConfigError& e) {
    error_record("config_error", e.what());
    return kConfigError;
  } catch (const BudgetInfeasible& e) {
    error_record("budget_infeasible", e.what());
    return kBudgetInfeasible;
  } catch (const std::exception& e) {
    error_record("runtime_error", e.what());
    return kRuntimeError;
  }
  return kOk;
}
