#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Runs the CLI with PLANFORGE_OUT pointing at `root`.
Result cli(const fs::path& root, const std::string& args) {
  const fs::path o = root / "stdout.txt", e = root / "stderr.txt";
  const std::string cmd = "cd '" + root.string() + "' && PLANFORGE_OUT='" + (root / "out").string() + "' '" +
                          PLANFORGE_CLI_PATH + "' " + args + " > '" + o.string() + "' 2> '" + e.string() + "'";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(o);
  r.err = slurp(e);
  return r;
}

struct Workspace {
  fs::path root;
  std::string schema, query, vae;
};

const Workspace& workspace() {
  static const Workspace w = [] {
    Workspace ws;
    ws.root = fs::temp_directory_path() / ("planforge_cli_" + std::to_string(::getpid()));
    fs::remove_all(ws.root);
    fs::create_directories(ws.root);
    EXPECT_EQ(cli(ws.root, "schema gen").code, 0);
    ws.schema = "out/schema.txt";
    const Result q = cli(ws.root, "query sample --schema out/schema.txt --seed 8");
    EXPECT_EQ(q.code, 0) << q.err;
    ws.query = json::parse(q.out)["query"];
    EXPECT_EQ(cli(ws.root, "corpus build --schema out/schema.txt --plans 1500 --seed 1").code, 0);
    const Result v =
        cli(ws.root, "vae train --schema out/schema.txt --corpus out/corpus.txt --latent 4 --hidden 16 --steps 200");
    EXPECT_EQ(v.code, 0) << v.err;
    ws.vae = "out/vae.bin";
    return ws;
  }();
  return w;
}

json last_json_line(const std::string& text) {
  std::istringstream in(text);
  std::string line, last;
  while (std::getline(in, line)) {
    if (!line.empty()) last = line;
  }
  return json::parse(last);
}

std::string run_args(const Workspace& w, const std::string& extra) {
  return "--schema " + w.schema + " --query '" + w.query + "' " + extra;
}

}  // namespace

TEST(Cli, ArtifactsCarryProvenance) {
  const auto& w = workspace();
  for (const char* f : {"out/schema.txt.meta.json", "out/corpus.txt.meta.json", "out/vae.bin.meta.json"}) {
    const json m = json::parse(slurp(w.root / f));
    EXPECT_TRUE(m.contains("schema_hash") && m.contains("config_hash") && m.contains("seed")) << f;
  }
  EXPECT_EQ(slurp(w.root / "out/vae_curve.csv").rfind("# schema_hash=", 0), 0u);
}

TEST(Cli, OptimizeBeatsOrMatchesHintsAndIsReproducible) {
  const auto& w = workspace();
  const Result h = cli(w.root, "hints run " + run_args(w, "--seed 8"));
  ASSERT_EQ(h.code, 0) << h.err;
  const double hints_best = json::parse(h.out)["best_latency_s"];
  const std::string args = "optimize " + run_args(w, "--vae " + w.vae +
                                                         " --budget 100 --max-executions 70 --seed 8 --inducing 16"
                                                         " --candidates 32 --name opt");
  const Result a = cli(w.root, args);
  ASSERT_EQ(a.code, 0) << a.err;
  const json s = json::parse(slurp(w.root / "out/opt/summary.json"));
  for (const char* k : {"query_id", "best_plan_text", "best_latency_s", "n_evals", "spent_s", "seed", "schema_hash",
                        "config_hash"}) {
    EXPECT_TRUE(s.contains(k)) << k;
  }
  EXPECT_LE(s["best_latency_s"].get<double>(), hints_best);
  EXPECT_LE(s["spent_s"].get<double>(), 100.0);
  EXPECT_EQ(s["n_evals"], 70);
  const std::string trace = slurp(w.root / "out/opt/trace.jsonl");
  EXPECT_EQ(last_json_line(trace)["type"], "summary");
  const auto cache_lines = [&] {
    std::istringstream in(slurp(w.root / "out/plan_cache.txt"));
    int n = 0;
    for (std::string l; std::getline(in, l);) ++n;
    return n;
  };
  const int cached = cache_lines();
  EXPECT_GT(cached, 0);
  ASSERT_EQ(cli(w.root, args).code, 0);
  EXPECT_EQ(slurp(w.root / "out/opt/trace.jsonl"), trace);
  EXPECT_EQ(cache_lines(), cached);
}

TEST(Cli, InitStrategies) {
  const auto& w = workspace();
  const std::string base = "optimize " + run_args(w, "--vae " + w.vae + " --budget 1e4 --max-executions 12 --inducing 8");
  EXPECT_EQ(cli(w.root, base + " --init default --name d").code, 0);
  EXPECT_EQ(cli(w.root, base + " --init random-3 --name r").code, 0);
  const json past = json::parse(slurp(w.root / "out/d/summary.json"));
  std::ofstream(w.root / "past.jsonl") << past.dump() << "\n";
  const Result ws = cli(w.root, base + " --init warmstart:past.jsonl --name ws");
  ASSERT_EQ(ws.code, 0) << ws.err;
  EXPECT_LE(json::parse(slurp(w.root / "out/ws/summary.json"))["best_latency_s"].get<double>(),
            past["best_latency_s"].get<double>());
  EXPECT_EQ(cli(w.root, base + " --init random-0").code, 1);
  EXPECT_EQ(cli(w.root, base + " --init nonsense").code, 1);
}

TEST(Cli, BaselineRandomRespectsBudgetAndDefault) {
  const auto& w = workspace();
  const Result r = cli(w.root, "baseline random " + run_args(w, "--budget 2 --seed 3 --name rnd"));
  ASSERT_EQ(r.code, 0) << r.err;
  const json s = json::parse(r.out);
  EXPECT_EQ(s["method"], "random");
  EXPECT_LE(s["spent_s"].get<double>(), 2.0);
  const std::string trace = slurp(w.root / "out/rnd/trace.jsonl");
  std::istringstream in(trace);
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  const json first = json::parse(line);
  ASSERT_FALSE(first["censored"].get<bool>());
  EXPECT_LE(s["best_latency_s"].get<double>(), first["latency_s"].get<double>());
}

TEST(Cli, ReportImprovementAndIdentity) {
  const auto& w = workspace();
  ASSERT_EQ(cli(w.root, "hints run " + run_args(w, "--seed 8 -o rep/h.jsonl")).code, 0);
  const Result r = cli(w.root, "report rep/h.jsonl -o rep/out");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out)["median_improvement_pct"]["hints49"], 0.0);
  const std::string cdf = slurp(w.root / "rep/out/cdf.csv");
  EXPECT_NE(cdf.find("threshold_pct,hints49"), std::string::npos);
}

TEST(Cli, ReportRejectsMixedSchemas) {
  const auto& w = workspace();
  ASSERT_EQ(cli(w.root, "hints run " + run_args(w, "--seed 8 -o mix/a.jsonl")).code, 0);
  ASSERT_EQ(cli(w.root, "schema gen --seed 7 -o mix/s.txt").code, 0);
  ASSERT_EQ(cli(w.root, "query sample --schema mix/s.txt --seed 1 -o mix/q.txt").code, 0);
  ASSERT_EQ(cli(w.root, "hints run --schema mix/s.txt --query mix/q.txt -o mix/b.jsonl").code, 0);
  const Result r = cli(w.root, "report mix/a.jsonl mix/b.jsonl");
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(json::parse(r.err)["error"]["kind"], "config_error");
}

TEST(Cli, ErrorExitCodes) {
  const auto& w = workspace();
  const Result missing = cli(w.root, "optimize " + run_args(w, "--vae nope.bin --budget 10"));
  EXPECT_EQ(missing.code, 1);
  EXPECT_EQ(json::parse(missing.err)["error"]["kind"], "config_error");
  EXPECT_EQ(cli(w.root, "optimize " + run_args(w, "--vae " + w.vae + " --budget 0")).code, 1);
  EXPECT_EQ(cli(w.root, "frobnicate").code, 1);
  const Result infeasible = cli(w.root, "optimize " + run_args(w, "--vae " + w.vae + " --budget 1e-6 --name inf"));
  EXPECT_EQ(infeasible.code, 3);
  EXPECT_EQ(json::parse(infeasible.err)["error"]["kind"], "budget_infeasible");
  EXPECT_TRUE(fs::exists(w.root / "out/inf/summary.json"));
  const Result other_schema = cli(w.root, "oracle --schema mix_missing.txt --query x");
  EXPECT_EQ(other_schema.code, 1);
}

TEST(Cli, OracleMatchesEnumeration) {
  const auto& w = workspace();
  const Result r = cli(w.root, "oracle " + run_args(w, ""));
  ASSERT_EQ(r.code, 0) << r.err;
  const json o = json::parse(r.out);
  EXPECT_EQ(o["plan_count"], 136080);
  EXPECT_GT(o["latency_s"].get<double>(), 0.0);
}
