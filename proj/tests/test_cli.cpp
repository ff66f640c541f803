#include <cstdlib>
#include <sstream>

#include <fmt/format.h>

#include "doctest.h"
#include "refloop/bench.hpp"
#include "refloop/cli.hpp"
#include "refloop/run_log.hpp"
#include "support/fixtures.hpp"

using namespace refloop;
namespace fs = std::filesystem;
using refloop::testing::read_file;
using refloop::testing::TempDir;
using refloop::testing::write_file;

namespace {

struct Invocation {
  int code;
  std::string out;
  std::string err;
};

Invocation cli(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = run_cli(args, out, err, nullptr);
  return {code, out.str(), err.str()};
}

// A fixture repo, a three-task file and a script that never runs dry.
struct Workspace {
  TempDir dir;
  fs::path repos = dir / "repos";
  fs::path tasks = dir / "tasks.jsonl";
  fs::path script = dir / "script.jsonl";
  fs::path runs = dir / "runs";

  Workspace() {
    refloop::testing::make_python_repo(repos / "demo", "demo", 2, 30);
    const auto r = cli({"build-bench", "--repo", (repos / "demo").string(), "--name", "demo", "--count", "3", "--seed",
                        "1", "--out", tasks.string()});
    REQUIRE(r.code == 0);
    std::string s;
    for (int i = 0; i < 40; ++i) {
      s += R"({"role":"actor","text":"    demo_value = arg"})" "\n";
      s += R"({"role":"reflector","text":"Evaluation Analysis: close\nContextual Analysis: loop body\nSpecific Suggestions:\ndemo_value_0_3 = arg * 3 + 0"})" "\n";
    }
    write_file(script, s);
  }

  std::vector<std::string> run_args(const std::string& run_id) const {
    return {"run", "--tasks", tasks.string(), "--repos", repos.string(), "--out-dir", runs.string(), "--run-id", run_id,
            "--workers", "1", "--actor-backend", "scripted", "--reflector-backend", "scripted", "--script",
            script.string()};
  }
};

std::vector<fs::path> logs_in(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".log") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("run with a scripted backend writes logs and a manifest") {
  Workspace ws;
  const auto r = cli(ws.run_args("happy"));
  CHECK_MESSAGE(r.code == 0, r.err);
  const auto run_dir = ws.runs / "happy";
  CHECK(logs_in(run_dir).size() == 3);
  CHECK(fs::exists(run_dir / "manifest.json"));
  CHECK(fs::exists(run_dir / "finished.json"));
  CHECK(r.out.find("| demo |") != std::string::npos);

  const auto manifest = nlohmann::json::parse(read_file(run_dir / "manifest.json"));
  CHECK(manifest["backends"]["actor"]["kind"] == "scripted");
  CHECK(manifest["backends"]["actor"].contains("script_sha256"));
  CHECK(manifest["loop_config"]["max_iter"] == 10);

  for (const auto& p : logs_in(run_dir)) {
    const auto log = read_run_log(p);
    REQUIRE(log.result.has_value());
    CHECK(log.result->iterations_run >= 1);
  }
}

TEST_CASE("report renders every format, including for an empty run") {
  Workspace ws;
  REQUIRE(cli(ws.run_args("rep")).code == 0);
  for (const auto* fmt_name : {"markdown", "csv", "jsonl"}) {
    const auto out = ws.dir / (std::string("report.") + fmt_name);
    const auto r = cli({"report", "--run-dir", (ws.runs / "rep").string(), "--format", fmt_name, "--out", out.string()});
    CHECK(r.code == 0);
    CHECK(fs::exists(out));
  }
  CHECK(parse_csv_report(read_file(ws.dir / "report.csv")).at(0).task_count == 3);

  fs::create_directories(ws.dir / "empty");
  const auto empty = cli({"report", "--run-dir", (ws.dir / "empty").string(), "--format", "csv", "--out",
                          (ws.dir / "empty.csv").string()});
  CHECK(empty.code == 0);
  CHECK(parse_csv_report(read_file(ws.dir / "empty.csv")).empty());
}

TEST_CASE("usage errors exit with code 2") {
  Workspace ws;
  auto missing = cli({"run", "--repos", ws.repos.string(), "--out-dir", ws.runs.string()});
  CHECK(missing.code == 2);
  CHECK(missing.err.find("--tasks") != std::string::npos);

  auto args = ws.run_args("x");
  args.push_back("--no-such-flag");
  CHECK(cli(args).code == 2);
  CHECK(cli({}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);

  auto bad = ws.run_args("bad");
  bad.insert(bad.end(), {"--max-iter", "0"});
  CHECK(cli(bad).code == 2);
}

TEST_CASE("a missing api key is reported by variable name") {
  Workspace ws;
  unsetenv("REFLOOP_CLI_TEST_KEY");
  const auto r = cli({"run", "--tasks", ws.tasks.string(), "--repos", ws.repos.string(), "--out-dir",
                      ws.runs.string(), "--actor-backend", "http", "--actor-url", "http://127.0.0.1:9/v1/chat/completions",
                      "--actor-model", "m", "--actor-api-key-env", "REFLOOP_CLI_TEST_KEY", "--reflector-backend",
                      "oracle"});
  CHECK(r.code == 2);
  CHECK(r.err.find("REFLOOP_CLI_TEST_KEY") != std::string::npos);
}

TEST_CASE("no-reflect mode logs a single iteration per task") {
  Workspace ws;
  auto args = ws.run_args("single");
  args.insert(args.end(), {"--mode", "no-reflect"});
  REQUIRE(cli(args).code == 0);
  const auto logs = logs_in(ws.runs / "single");
  REQUIRE(logs.size() == 3);
  for (const auto& p : logs) {
    const auto log = read_run_log(p);
    CHECK(log.records.size() == 1);
    CHECK(log.result->iterations_run == 1);
  }
}

TEST_CASE("config file values sit under command-line flags") {
  Workspace ws;
  write_file(ws.dir / "loop.toml", "[run]\nmax-iter = 2\nno-imp-thres = 5\n");
  auto args = ws.run_args("cfg");
  args.insert(args.end(), {"--config", (ws.dir / "loop.toml").string()});
  REQUIRE(cli(args).code == 0);
  auto manifest = nlohmann::json::parse(read_file(ws.runs / "cfg" / "manifest.json"));
  CHECK(manifest["loop_config"]["max_iter"] == 2);
  CHECK(manifest["loop_config"]["no_imp_thres"] == 5);
  for (const auto& p : logs_in(ws.runs / "cfg")) CHECK(read_run_log(p).records.size() <= 2);

  auto override_args = ws.run_args("cfg2");
  override_args.insert(override_args.end(), {"--config", (ws.dir / "loop.toml").string(), "--max-iter", "1"});
  REQUIRE(cli(override_args).code == 0);
  manifest = nlohmann::json::parse(read_file(ws.runs / "cfg2" / "manifest.json"));
  CHECK(manifest["loop_config"]["max_iter"] == 1);
  CHECK(manifest["loop_config"]["no_imp_thres"] == 5);
}

TEST_CASE("reruns skip finished tasks unless forced") {
  Workspace ws;
  REQUIRE(cli(ws.run_args("resume")).code == 0);
  const auto before = read_file(logs_in(ws.runs / "resume").front());
  // An empty script would fail any task that actually runs.
  write_file(ws.dir / "empty.jsonl", "");
  auto args = ws.run_args("resume");
  args[args.size() - 1] = (ws.dir / "empty.jsonl").string();
  CHECK(cli(args).code == 0);
  args.push_back("--force");
  CHECK(cli(args).code == 1);
  CHECK(read_file(logs_in(ws.runs / "resume").front()) != before);
}

TEST_CASE("index and solve-one") {
  Workspace ws;
  const auto idx = ws.dir / "demo.index.jsonl";
  const auto r = cli({"index", "--repo", (ws.repos / "demo").string(), "--out", idx.string(), "--window", "8",
                      "--stride", "4"});
  CHECK(r.code == 0);
  std::ifstream in(idx);
  const auto index = CorpusIndex::read_jsonl(in);
  CHECK(index.params().window_size == 8);
  CHECK(index.size() > 0);

  const auto tasks = read_tasks_jsonl(ws.tasks);
  const auto solve = cli({"solve-one", "--tasks", ws.tasks.string(), "--repos", ws.repos.string(), "--task-id",
                          tasks.front().task_id, "--trace", "--actor-backend", "scripted", "--reflector-backend",
                          "scripted", "--script", ws.script.string(), "--max-iter", "2"});
  CHECK(solve.code == 0);
  CHECK(solve.out.find("=== iteration 0 ===") != std::string::npos);
  CHECK(solve.out.find("task " + tasks.front().task_id) != std::string::npos);

  CHECK(cli({"solve-one", "--tasks", ws.tasks.string(), "--repos", ws.repos.string(), "--task-id", "nope",
             "--actor-backend", "oracle", "--reflector-backend", "oracle"})
            .code == 2);
}

TEST_CASE("the installed executable reports usage errors") {
  const std::string exe = REFLOOP_CLI_PATH;
  CHECK(WEXITSTATUS(std::system((exe + " --version > /dev/null").c_str())) == 0);
  CHECK(WEXITSTATUS(std::system((exe + " run --bogus > /dev/null 2>&1").c_str())) == 2);
}
