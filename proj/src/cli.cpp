#include "refloop/cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <thread>

#include <fmt/chrono.h>
#include <fmt/format.h>

#include "CLI11.hpp"
#include "refloop/bench.hpp"
#include "refloop/hash.hpp"
#include "refloop/metrics.hpp"
#include "refloop/reflector.hpp"
#include "refloop/run_log.hpp"

namespace refloop {
namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BackendFlags {
  std::string kind = "http";
  std::string url;
  std::string model;
  std::string api_key_env = "OPENAI_API_KEY";
};

struct LoopFlags {
  LoopConfig loop;
  IndexParams index;
  std::string mode = "full";
  std::string final_pick = "best";
  std::string snippet_order = "desc";
  int x_cap = -1;
  BackendFlags actor;
  BackendFlags reflector;
  std::string script;
  std::string sentinel = "ORACLE_SENTINEL";
  int timeout_ms = 60'000;
  int max_retries = 3;
  int backoff_ms = 1'000;
  int concurrency = 4;
  bool http_trace = false;
};

void add_loop_options(CLI::App* cmd, LoopFlags& f) {
  cmd->fallthrough();
  cmd->add_option("--max-iter", f.loop.max_iter, "Iteration cap")->capture_default_str();
  cmd->add_option("--no-imp-thres", f.loop.no_imp_thres, "Consecutive non-improving passes before stopping")
      ->capture_default_str();
  cmd->add_option("--es-epsilon", f.loop.es_epsilon, "Minimum ES gain that counts as improvement")
      ->capture_default_str();
  cmd->add_option("--n", f.loop.n, "Retrieval target lines")->capture_default_str();
  cmd->add_option("--k", f.loop.k, "Snippets per prompt")->capture_default_str();
  cmd->add_option("--x-cap", f.x_cap, "Feedback lines per target (default n/2)");
  cmd->add_option("--window", f.index.window_size, "Chunk window in lines")->capture_default_str();
  cmd->add_option("--stride", f.index.stride, "Chunk stride in lines")->capture_default_str();
  cmd->add_option("--budget", f.loop.prompt.budget, "Prompt budget in bytes")->capture_default_str();
  cmd->add_option("--prefix-tail", f.loop.prompt.prefix_tail_len, "Unfinished-code lines in the prompt")
      ->capture_default_str();
  cmd->add_option("--snippet-order", f.snippet_order, "Snippet order in the prompt")
      ->check(CLI::IsMember({"desc", "asc"}))
      ->capture_default_str();
  cmd->add_option("--final", f.final_pick, "Answer selection")->check(CLI::IsMember({"best", "last"}))
      ->capture_default_str();
  cmd->add_option("--mode", f.mode, "Loop mode")
      ->check(CLI::IsMember({"full", "no-reflect", "no-evaluator"}))
      ->capture_default_str();
  cmd->add_flag("--blind", f.loop.blind, "Withhold ground truth from the loop");
  cmd->add_option("--actor-max-tokens", f.loop.actor_params.max_new_tokens)->capture_default_str();
  cmd->add_option("--reflector-max-tokens", f.loop.reflector_params.max_new_tokens)->capture_default_str();
  cmd->add_option("--temperature", f.loop.actor_params.temperature)->capture_default_str();

  for (auto* role : {&f.actor, &f.reflector}) {
    const std::string p = role == &f.actor ? "actor" : "reflector";
    cmd->add_option("--" + p + "-backend", role->kind, "Backend kind for the " + p)
        ->check(CLI::IsMember({"http", "scripted", "oracle"}))
        ->capture_default_str();
    cmd->add_option("--" + p + "-url", role->url, "Chat-completions endpoint URL");
    cmd->add_option("--" + p + "-model", role->model, "Model name");
    cmd->add_option("--" + p + "-api-key-env", role->api_key_env, "Environment variable holding the API key")
        ->capture_default_str();
  }
  cmd->add_option("--script", f.script, "Scripted backend responses (JSONL)");
  cmd->add_option("--sentinel", f.sentinel, "Oracle backend sentinel")->capture_default_str();
  cmd->add_option("--timeout-ms", f.timeout_ms)->capture_default_str();
  cmd->add_option("--max-retries", f.max_retries)->capture_default_str();
  cmd->add_option("--backoff-ms", f.backoff_ms)->capture_default_str();
  cmd->add_option("--concurrency", f.concurrency, "Concurrent backend requests")->capture_default_str();
}

LoopConfig finish_loop_config(LoopFlags& f) {
  LoopConfig c = f.loop;
  c.mode = loop_mode_from_string(f.mode);
  c.final_pick = final_pick_from_string(f.final_pick);
  c.prompt.order = snippet_order_from_string(f.snippet_order);
  if (f.x_cap >= 0) c.x_cap = f.x_cap;
  c.reflector_params.temperature = c.actor_params.temperature;
  c.validate();
  f.index.validate();
  return c;
}

BackendConfig backend_config(const LoopFlags& f, const BackendFlags& b) {
  BackendConfig c;
  c.kind = backend_kind_from_string(b.kind);
  c.endpoint_url = b.url;
  c.model_name = b.model;
  c.api_key_env = b.api_key_env;
  c.timeout = std::chrono::milliseconds(f.timeout_ms);
  c.max_retries = f.max_retries;
  c.retry_backoff = std::chrono::milliseconds(f.backoff_ms);
  c.script_path = f.script;
  c.oracle_sentinel = f.sentinel;
  c.trace = f.http_trace;
  return c;
}

nlohmann::json backend_json(const BackendConfig& c) {
  nlohmann::json j = {{"kind", to_string(c.kind)}};
  switch (c.kind) {
    case BackendKind::http_chat:
      j["endpoint_url"] = c.endpoint_url;
      j["model_name"] = c.model_name;
      j["api_key_env"] = c.api_key_env;
      j["timeout_ms"] = c.timeout.count();
      j["max_retries"] = c.max_retries;
      j["retry_backoff_ms"] = c.retry_backoff.count();
      break;
    case BackendKind::scripted: {
      j["script_path"] = c.script_path.string();
      std::ifstream in(c.script_path, std::ios::binary);
      std::stringstream ss;
      ss << in.rdbuf();
      j["script_sha256"] = sha256_hex(ss.str());
      break;
    }
    case BackendKind::oracle:
      j["sentinel"] = c.oracle_sentinel;
      j["miss_line"] = c.oracle_miss_line;
      break;
  }
  return j;
}

struct Backends {
  BackendConfig actor_config;
  BackendConfig reflector_config;
  std::unique_ptr<Gateway> actor;
  std::unique_ptr<Gateway> reflector;
};

Backends make_backends(const LoopFlags& f) {
  Backends b;
  b.actor_config = backend_config(f, f.actor);
  b.reflector_config = backend_config(f, f.reflector);
  auto actor = make_backend(b.actor_config);
  // Scripted roles read one shared queue so a single script drives both.
  auto reflector = (b.actor_config.kind == BackendKind::scripted && b.reflector_config.kind == BackendKind::scripted)
                       ? actor
                       : make_backend(b.reflector_config);
  b.actor = std::make_unique<Gateway>(actor, f.concurrency);
  b.reflector = std::make_unique<Gateway>(reflector, f.concurrency);
  return b;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(now));
}

std::string file_sha256(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

void write_json_file(const fs::path& p, const nlohmann::json& j) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", p.string()));
  out << j.dump(2) << '\n';
}

bool has_task_errors(const std::vector<LoopResult>& results) {
  for (const auto& r : results) {
    if (r.stop_reason == StopReason::backend_error || r.stop_reason == StopReason::task_error) return true;
  }
  return false;
}

void print_iteration(std::ostream& out, const IterationRecord& rec) {
  out << fmt::format("=== iteration {} ===\n", rec.iteration);
  out << fmt::format("target ({} feedback lines):\n", rec.feedback_line_count);
  for (const auto& l : rec.target_lines) out << "  | " << l << '\n';
  out << "retrieved:\n";
  for (const auto& t : rec.retrieval_trace) {
    out << fmt::format("  {:.4f}  {}:{}-{}\n", t.score, t.file_path, t.start_line, t.end_line);
  }
  out << "prompt:\n" << rec.prompt_rendered << "\n--- end prompt ---\n";
  out << fmt::format("generated: {}\nEM: {}  ES: {:.4f}  no_imp_cnt: {}  best_es: {:.4f}\n", rec.generated_line,
                     rec.em, rec.es, rec.no_imp_cnt, rec.best_es);
  if (rec.feedback) {
    out << fmt::format("{}: {}\n", kEvaluationHeader, rec.feedback->evaluation_analysis);
    out << fmt::format("{}: {}\n", kContextualHeader, rec.feedback->contextual_analysis);
    out << fmt::format("{}:\n", kSuggestionsHeader);
    for (const auto& s : rec.feedback->suggestions) out << "  " << s << '\n';
  }
}

class TracePrinter : public IterationSink {
 public:
  explicit TracePrinter(std::ostream& out) : out_(out) {}
  void on_iteration(const IterationRecord& rec) override { print_iteration(out_, rec); }

 private:
  std::ostream& out_;
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            const std::atomic<bool>* cancel) {
  CLI::App app{"Iterative retrieve-generate-evaluate-reflect line completion", "refloop"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));
  app.set_config("--config", "", "TOML config file with [run] / [solve-one] sections; command-line flags win");

  // index
  std::string index_repo;
  std::string index_out;
  IndexParams index_params;
  auto* index_cmd = app.add_subcommand("index", "Chunk and tokenize a repository into an index file");
  index_cmd->add_option("--repo", index_repo, "Repository directory")->required()->check(CLI::ExistingDirectory);
  index_cmd->add_option("--out", index_out, "Index file (JSONL)")->required();
  index_cmd->add_option("--window", index_params.window_size)->capture_default_str();
  index_cmd->add_option("--stride", index_params.stride)->capture_default_str();

  // build-bench
  std::string bench_repo;
  std::string bench_name;
  int bench_count = 200;
  std::uint64_t bench_seed = 0;
  std::string bench_out;
  auto* bench_cmd = app.add_subcommand("build-bench", "Sample line-completion tasks from a repository");
  bench_cmd->add_option("--repo", bench_repo)->required()->check(CLI::ExistingDirectory);
  bench_cmd->add_option("--name", bench_name, "Repository name recorded in tasks")->required();
  bench_cmd->add_option("--count", bench_count)->capture_default_str();
  bench_cmd->add_option("--seed", bench_seed)->capture_default_str();
  bench_cmd->add_option("--out", bench_out, "Task file (JSONL)")->required();

  // run
  LoopFlags run_flags;
  std::string run_tasks;
  std::string run_repos;
  std::string run_out_dir;
  std::string run_id = "run";
  bool run_force = false;
  int run_workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  auto* run_cmd = app.add_subcommand("run", "Run the completion loop over a task file");
  run_cmd->add_option("--tasks", run_tasks, "Task file (JSONL)")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--repos", run_repos, "Directory of repository clones")->required()->check(
      CLI::ExistingDirectory);
  run_cmd->add_option("--out-dir", run_out_dir, "Runs directory")->required();
  run_cmd->add_option("--run-id", run_id, "Run name under the runs directory")->capture_default_str();
  run_cmd->add_flag("--force", run_force, "Rerun tasks that already have a log");
  run_cmd->add_option("--workers", run_workers, "Concurrent tasks")->check(CLI::PositiveNumber);
  run_cmd->add_flag("--trace", run_flags.http_trace, "Log backend request/response bodies to stderr");
  add_loop_options(run_cmd, run_flags);

  // report
  std::string report_dir;
  std::string report_format = "markdown";
  std::string report_out;
  auto* report_cmd = app.add_subcommand("report", "Aggregate per-repository EM/ES for a run");
  report_cmd->add_option("--run-dir", report_dir)->required()->check(CLI::ExistingDirectory);
  report_cmd->add_option("--format", report_format)
      ->check(CLI::IsMember({"markdown", "csv", "jsonl"}))
      ->capture_default_str();
  report_cmd->add_option("--out", report_out)->required();

  // solve-one
  LoopFlags solve_flags;
  std::string solve_tasks;
  std::string solve_repos;
  std::string solve_task_id;
  bool solve_trace = false;
  auto* solve_cmd = app.add_subcommand("solve-one", "Run a single task and print its iterations");
  solve_cmd->add_option("--tasks", solve_tasks)->required()->check(CLI::ExistingFile);
  solve_cmd->add_option("--repos", solve_repos)->required()->check(CLI::ExistingDirectory);
  solve_cmd->add_option("--task-id", solve_task_id)->required();
  solve_cmd->add_flag("--trace", solve_trace, "Print prompts, scores and feedback per iteration");
  solve_cmd->add_flag("--http-trace", solve_flags.http_trace, "Log backend request/response bodies to stderr");
  add_loop_options(solve_cmd, solve_flags);

  std::vector<std::string> argv_store{"refloop"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* failed = &app;
    for (auto* sub : app.get_subcommands()) failed = sub;
    err << failed->help();
    return 2;
  }

  try {
    if (*index_cmd) {
      index_params.validate();
      const auto ingest = ingest_repo(index_repo, std::nullopt);
      for (const auto& w : ingest.warnings) err << fmt::format("warning: skipped {}: {}\n", w.path, w.reason);
      const auto index = build_index(ingest.files, index_params);
      std::ofstream f(index_out, std::ios::binary | std::ios::trunc);
      if (!f) throw std::runtime_error(fmt::format("cannot write '{}'", index_out));
      index.write_jsonl(f);
      out << fmt::format("indexed {} files into {} chunks ({})\n", ingest.files.size(), index.size(),
                         index.fingerprint());
      return 0;
    }

    if (*bench_cmd) {
      const auto tasks = build_benchmark(bench_repo, bench_name, bench_count, bench_seed);
      std::ofstream f(bench_out, std::ios::binary | std::ios::trunc);
      if (!f) throw std::runtime_error(fmt::format("cannot write '{}'", bench_out));
      write_tasks_jsonl(f, tasks);
      out << fmt::format("wrote {} tasks to {}\n", tasks.size(), bench_out);
      return 0;
    }

    if (*run_cmd) {
      const auto config = finish_loop_config(run_flags);
      auto tasks = read_tasks_jsonl(fs::path(run_tasks));
      auto backends = make_backends(run_flags);

      const fs::path run_dir = fs::path(run_out_dir) / run_id;
      fs::create_directories(run_dir);
      nlohmann::json manifest = {
          {"run_id", run_id},
          {"tool_version", kToolVersion},
          {"started_at", utc_now()},
          {"tasks_file", run_tasks},
          {"tasks_sha256", file_sha256(run_tasks)},
          {"repos_dir", run_repos},
          {"loop_config", config},
          {"index_params", {{"window_size", run_flags.index.window_size}, {"stride", run_flags.index.stride}}},
          {"backends", {{"actor", backend_json(backends.actor_config)},
                        {"reflector", backend_json(backends.reflector_config)}}},
          {"templates", {{"actor", kActorTemplateVersion}, {"reflector", kReflectorTemplateVersion}}},
          {"normalization", "strip"},
          {"run_log_schema", kRunLogSchema},
      };
      write_json_file(run_dir / "manifest.json", manifest);

      BenchRunOptions opts;
      opts.repos_dir = run_repos;
      opts.run_dir = run_dir;
      opts.force = run_force;
      opts.workers = run_workers;
      opts.index_params = run_flags.index;
      opts.cancel = cancel;
      const auto results = run_benchmark(tasks, config, {*backends.actor, *backends.reflector}, opts);

      const bool interrupted = cancel && cancel->load();
      const int code = interrupted ? 130 : (has_task_errors(results) ? 1 : 0);
      write_json_file(run_dir / "finished.json",
                      {{"finished_at", utc_now()}, {"tasks_total", tasks.size()},
                       {"tasks_completed", results.size()}, {"interrupted", interrupted}, {"exit_code", code}});
      for (const auto& r : results) {
        if (!r.error.empty()) err << "error: " << r.error << '\n';
      }
      const auto report = aggregate(results, config);
      out << render_report(report, ReportFormat::markdown);
      return code;
    }

    if (*report_cmd) {
      const auto results = load_run_results(report_dir);
      nlohmann::json config = nlohmann::json::object();
      const auto manifest_path = fs::path(report_dir) / "manifest.json";
      if (fs::exists(manifest_path)) {
        std::ifstream in(manifest_path);
        config = nlohmann::json::parse(in).value("loop_config", nlohmann::json::object());
      }
      const auto report = aggregate(results, config);
      emit_report(report, report_format_from_string(report_format), report_out);
      out << fmt::format("{} tasks across {} repositories -> {}\n", results.size(), report.rows.size(),
                         report_out);
      return 0;
    }

    if (*solve_cmd) {
      const auto config = finish_loop_config(solve_flags);
      const auto tasks = read_tasks_jsonl(fs::path(solve_tasks));
      const auto it = std::find_if(tasks.begin(), tasks.end(),
                                   [&](const CompletionTask& t) { return t.task_id == solve_task_id; });
      if (it == tasks.end()) throw UsageError(fmt::format("task '{}' not found in {}", solve_task_id, solve_tasks));
      auto backends = make_backends(solve_flags);
      const auto ingest = ingest_repo(fs::path(solve_repos) / it->repo_name, LeakageCut{it->file_path, it->line_no});
      const auto index = build_index(ingest.files, solve_flags.index);
      ExperienceCache experience;
      TracePrinter printer(out);
      const auto result = run_task(*it, index, {*backends.actor, *backends.reflector}, config, experience,
                                   solve_trace ? &printer : nullptr);
      out << fmt::format("task {}: stop={} iterations={} final_iteration={} EM={} ES={:.4f}\n", result.task_id,
                         to_string(result.stop_reason), result.iterations_run, result.final_record.iteration,
                         result.final_record.em, result.final_record.es);
      out << "completion: " << result.final_record.generated_line << '\n';
      out << "truth:      " << it->ground_truth << '\n';
      if (!result.error.empty()) {
        err << "error: " << result.error << '\n';
        return 1;
      }
      return 0;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace refloop
