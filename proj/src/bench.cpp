#include "refloop/bench.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>
#include <unordered_set>
#include <variant>

#include <fmt/format.h>

#include "refloop/metrics.hpp"
#include "refloop/run_log.hpp"

namespace refloop {
namespace fs = std::filesystem;

namespace {

constexpr std::array<StopReason, 5> kAllStopReasons = {StopReason::exact_match, StopReason::stagnation,
                                                       StopReason::max_iter, StopReason::backend_error,
                                                       StopReason::task_error};

// Unbiased integer in [0, bound) from the raw engine output, so samples do
// not depend on the standard library's distribution implementation.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t r = rng();
    if (r >= threshold) return r % bound;
  }
}

struct Candidate {
  std::size_t file = 0;
  int line_no = 0;
};

LoopResult error_result(const CompletionTask& task, std::string message) {
  LoopResult r;
  r.task_id = task.task_id;
  r.repo_name = task.repo_name;
  r.stop_reason = StopReason::task_error;
  r.final_record.iteration = -1;
  r.error = std::move(message);
  return r;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

}  // namespace

std::vector<int> eligible_lines(const SourceFile& file) {
  std::vector<int> out;
  std::string_view open_delim;  // non-empty while inside a triple-quoted string
  for (std::size_t i = 0; i < file.lines.size(); ++i) {
    const std::string& line = file.lines[i];
    bool touches_string = !open_delim.empty();
    std::size_t pos = 0;
    for (;;) {
      if (open_delim.empty()) {
        const auto d1 = line.find("\"\"\"", pos);
        const auto d2 = line.find("'''", pos);
        const auto at = std::min(d1, d2);
        if (at == std::string::npos) break;
        open_delim = (at == d1) ? std::string_view("\"\"\"") : std::string_view("'''");
        touches_string = true;
        pos = at + 3;
      } else {
        const auto at = line.find(open_delim, pos);
        if (at == std::string::npos) break;
        open_delim = {};
        touches_string = true;
        pos = at + 3;
      }
    }
    const auto stripped = normalize(line);
    if (touches_string || stripped.empty() || stripped.front() == '#') continue;
    out.push_back(static_cast<int>(i + 1));
  }
  return out;
}

std::vector<CompletionTask> build_benchmark(const fs::path& repo_root, const std::string& repo_name, int count,
                                            std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("count must be >= 1");
  const auto ingest = ingest_repo(repo_root, std::nullopt);
  const auto fingerprint = fingerprint_files(ingest.files);

  // Distinct ground-truth texts only; the first occurrence in (path, line) order wins.
  std::vector<Candidate> pool;
  std::unordered_set<std::string> seen;
  for (std::size_t f = 0; f < ingest.files.size(); ++f) {
    for (const int line_no : eligible_lines(ingest.files[f])) {
      if (seen.insert(normalize(ingest.files[f].lines[static_cast<std::size_t>(line_no - 1)])).second) {
        pool.push_back({f, line_no});
      }
    }
  }
  if (pool.size() < static_cast<std::size_t>(count)) {
    throw BuildError(fmt::format("repository '{}' has {} eligible lines, {} requested", repo_name, pool.size(),
                                 count),
                     pool.size());
  }

  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < static_cast<std::size_t>(count); ++i) {
    const auto j = i + uniform_below(rng, pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(static_cast<std::size_t>(count));
  std::sort(pool.begin(), pool.end(), [](const Candidate& a, const Candidate& b) {
    return a.file != b.file ? a.file < b.file : a.line_no < b.line_no;
  });

  std::vector<CompletionTask> tasks;
  tasks.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& src = ingest.files[pool[i].file];
    const auto idx = static_cast<std::size_t>(pool[i].line_no - 1);
    CompletionTask t;
    t.task_id = fmt::format("{}-{:04}", repo_name, i);
    t.repo_name = repo_name;
    t.file_path = src.path;
    t.line_no = pool[i].line_no;
    t.prefix.assign(src.lines.begin(), src.lines.begin() + static_cast<std::ptrdiff_t>(idx));
    t.ground_truth = src.lines[idx];
    t.sampler_seed = seed;
    t.repo_fingerprint = fingerprint;
    tasks.push_back(std::move(t));
  }
  return tasks;
}

std::vector<LoopResult> run_benchmark(const std::vector<CompletionTask>& tasks, const LoopConfig& config,
                                      Gateways gateways, const BenchRunOptions& options) {
  config.validate();
  options.index_params.validate();
  fs::create_directories(options.run_dir);

  std::vector<std::optional<LoopResult>> results(tasks.size());
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto log_path = options.run_dir / (task_file_stem(tasks[i].task_id) + ".log");
    if (!options.force && fs::exists(log_path)) {
      try {
        auto log = read_run_log(log_path);
        if (log.result) {
          results[i] = std::move(*log.result);
          continue;
        }
      } catch (const std::exception&) {
        // Unreadable logs are rerun.
      }
    }
    pending.push_back(i);
  }

  // Repository snapshots are ingested once and shared read-only by workers.
  std::map<std::string, std::variant<IngestResult, std::string>> repos;
  for (const auto i : pending) {
    const auto& name = tasks[i].repo_name;
    if (repos.contains(name)) continue;
    try {
      repos.emplace(name, ingest_repo(options.repos_dir / name, std::nullopt, options.filters));
    } catch (const std::exception& ex) {
      repos.emplace(name, fmt::format("repository '{}' unavailable: {}", name, ex.what()));
    }
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      if (options.cancel && options.cancel->load()) return;
      const auto slot = next.fetch_add(1);
      if (slot >= pending.size()) return;
      const auto& task = tasks[pending[slot]];
      auto& out = results[pending[slot]];
      const auto& repo = repos.at(task.repo_name);
      if (const auto* err = std::get_if<std::string>(&repo)) {
        out = error_result(task, *err);
        write_run_log(options.run_dir / (task_file_stem(task.task_id) + ".log"), task, {}, *out);
        continue;
      }
      try {
        auto files = std::get<IngestResult>(repo).files;
        apply_leakage_cut(files, {task.file_path, task.line_no});
        const auto index = build_index(files, options.index_params);
        ExperienceCache experience;
        RunLogWriter log(options.run_dir / (task_file_stem(task.task_id) + ".log"), task);
        out = run_task(task, index, gateways, config, experience, &log);
        log.finish(*out);
      } catch (const std::exception& ex) {
        out = error_result(task, fmt::format("task {}: {}", task.task_id, ex.what()));
        write_run_log(options.run_dir / (task_file_stem(task.task_id) + ".log"), task, {}, *out);
      }
    }
  };

  const int workers = std::max(1, std::min<int>(options.workers, static_cast<int>(pending.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  }

  std::vector<LoopResult> out;
  out.reserve(tasks.size());
  for (auto& r : results) {
    if (r) out.push_back(std::move(*r));
  }
  return out;
}

std::vector<LoopResult> run_benchmark(const fs::path& tasks_jsonl, const LoopConfig& config, Gateways gateways,
                                      const BenchRunOptions& options) {
  return run_benchmark(read_tasks_jsonl(tasks_jsonl), config, gateways, options);
}

BenchReport aggregate(std::span<const LoopResult> results, nlohmann::json config) {
  struct Acc {
    std::vector<int> em;
    std::vector<double> es;
    std::map<std::string, int> reasons;
  };
  std::map<std::string, Acc> by_repo;
  for (const auto& r : results) {
    auto& acc = by_repo[r.repo_name];
    acc.em.push_back(r.final_record.em);
    acc.es.push_back(r.final_record.es);
    ++acc.reasons[std::string(to_string(r.stop_reason))];
  }

  BenchReport report;
  report.config = std::move(config);
  for (auto& [repo, acc] : by_repo) {
    RepoRow row;
    row.repo = repo;
    row.task_count = static_cast<int>(acc.em.size());
    long em_sum = 0;
    for (int v : acc.em) em_sum += v;
    // Summing in sorted order keeps the mean independent of result order.
    std::sort(acc.es.begin(), acc.es.end());
    double es_sum = 0.0;
    for (double v : acc.es) es_sum += v;
    row.mean_em = static_cast<double>(em_sum) / row.task_count;
    row.mean_es = es_sum / row.task_count;
    for (const auto reason : kAllStopReasons) row.stop_reasons[std::string(to_string(reason))] = 0;
    for (const auto& [name, n] : acc.reasons) row.stop_reasons[name] = n;
    report.rows.push_back(std::move(row));
  }
  return report;
}

ReportFormat report_format_from_string(std::string_view s) {
  if (s == "markdown" || s == "md") return ReportFormat::markdown;
  if (s == "csv") return ReportFormat::csv;
  if (s == "jsonl") return ReportFormat::jsonl;
  throw std::invalid_argument(fmt::format("unknown report format '{}'", s));
}

std::string render_report(const BenchReport& report, ReportFormat format) {
  std::string out;
  switch (format) {
    case ReportFormat::markdown: {
      out += "| Repository | EM | ES | Tasks |";
      for (const auto reason : kAllStopReasons) out += fmt::format(" {} |", to_string(reason));
      out += "\n|---|---:|---:|---:|";
      for (std::size_t i = 0; i < kAllStopReasons.size(); ++i) out += "---:|";
      out += '\n';
      for (const auto& row : report.rows) {
        out += fmt::format("| {} | {:.4f} | {:.4f} | {} |", row.repo, row.mean_em, row.mean_es, row.task_count);
        for (const auto reason : kAllStopReasons) {
          out += fmt::format(" {} |", row.stop_reasons.at(std::string(to_string(reason))));
        }
        out += '\n';
      }
      out += fmt::format("\nConfig: `{}`\n", report.config.dump());
      break;
    }
    case ReportFormat::csv: {
      out += "repo,task_count,mean_em,mean_es";
      for (const auto reason : kAllStopReasons) out += fmt::format(",{}", to_string(reason));
      out += '\n';
      for (const auto& row : report.rows) {
        out += fmt::format("{},{},{},{}", csv_field(row.repo), row.task_count, row.mean_em, row.mean_es);
        for (const auto reason : kAllStopReasons) {
          out += fmt::format(",{}", row.stop_reasons.at(std::string(to_string(reason))));
        }
        out += '\n';
      }
      break;
    }
    case ReportFormat::jsonl: {
      out += nlohmann::json{{"kind", "config"}, {"config", report.config}}.dump() + "\n";
      for (const auto& row : report.rows) {
        out += nlohmann::json{{"kind", "repo"},
                              {"repo", row.repo},
                              {"task_count", row.task_count},
                              {"mean_em", row.mean_em},
                              {"mean_es", row.mean_es},
                              {"stop_reasons", row.stop_reasons}}
                   .dump() +
               "\n";
      }
      break;
    }
  }
  return out;
}

void emit_report(const BenchReport& report, ReportFormat format, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(fmt::format("cannot write report '{}'", path.string()));
  out << render_report(report, format);
  if (!out.flush()) throw std::runtime_error(fmt::format("error writing report '{}'", path.string()));
}

std::vector<RepoRow> parse_csv_report(std::string_view csv) {
  std::vector<RepoRow> rows;
  std::vector<std::string> header;
  std::istringstream in{std::string(csv)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (header.empty()) {
      header = std::move(fields);
      continue;
    }
    if (fields.size() != header.size()) throw std::runtime_error("malformed CSV report row");
    RepoRow row;
    row.repo = fields[0];
    row.task_count = std::stoi(fields[1]);
    row.mean_em = std::stod(fields[2]);
    row.mean_es = std::stod(fields[3]);
    for (std::size_t i = 4; i < fields.size(); ++i) row.stop_reasons[header[i]] = std::stoi(fields[i]);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<LoopResult> load_run_results(const fs::path& run_dir) {
  std::vector<fs::path> logs;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".log") logs.push_back(entry.path());
  }
  std::sort(logs.begin(), logs.end());
  std::vector<LoopResult> results;
  for (const auto& p : logs) {
    auto log = read_run_log(p);
    if (log.result) results.push_back(std::move(*log.result));
  }
  return results;
}

}  // namespace refloop
