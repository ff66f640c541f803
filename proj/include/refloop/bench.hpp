#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "refloop/corpus_index.hpp"
#include "refloop/loop_controller.hpp"
#include "refloop/task.hpp"

namespace refloop {

class BuildError : public std::runtime_error {
 public:
  BuildError(const std::string& what, std::size_t eligible) : std::runtime_error(what), eligible_(eligible) {}
  [[nodiscard]] std::size_t eligible() const { return eligible_; }

 private:
  std::size_t eligible_;
};

/// 1-based line numbers of lines usable as ground truth: non-blank, not a
/// '#' comment, not touching a triple-quoted string.
std::vector<int> eligible_lines(const SourceFile& file);

/// Uniform sample without replacement over distinct eligible lines of the
/// repository's .py files. Tasks come back ordered by (file_path, line_no).
std::vector<CompletionTask> build_benchmark(const std::filesystem::path& repo_root, const std::string& repo_name,
                                            int count = 200, std::uint64_t seed = 0);

struct BenchRunOptions {
  std::filesystem::path repos_dir;  // holds one clone per repo_name
  std::filesystem::path run_dir;    // receives <task-id>.log files
  bool force = false;
  int workers = 1;
  IndexParams index_params;
  IngestFilters filters;
  const std::atomic<bool>* cancel = nullptr;
};

/// One result per task, in task order. Tasks whose log already holds a result
/// are loaded instead of rerun unless `force` is set.
std::vector<LoopResult> run_benchmark(const std::vector<CompletionTask>& tasks, const LoopConfig& config,
                                      Gateways gateways, const BenchRunOptions& options);

std::vector<LoopResult> run_benchmark(const std::filesystem::path& tasks_jsonl, const LoopConfig& config,
                                      Gateways gateways, const BenchRunOptions& options);

struct RepoRow {
  std::string repo;
  int task_count = 0;
  double mean_em = 0.0;
  double mean_es = 0.0;
  std::map<std::string, int> stop_reasons;  // every StopReason name, zero included

  friend bool operator==(const RepoRow&, const RepoRow&) = default;
};

struct BenchReport {
  std::vector<RepoRow> rows;  // sorted by repo
  nlohmann::json config = nlohmann::json::object();
};

BenchReport aggregate(std::span<const LoopResult> results, nlohmann::json config = nlohmann::json::object());

enum class ReportFormat { markdown, csv, jsonl };

ReportFormat report_format_from_string(std::string_view s);

std::string render_report(const BenchReport& report, ReportFormat format);

/// Throws std::runtime_error when the file cannot be written.
void emit_report(const BenchReport& report, ReportFormat format, const std::filesystem::path& path);

/// Rows of a CSV report.
std::vector<RepoRow> parse_csv_report(std::string_view csv);

/// Results recorded in a run directory (complete logs only).
std::vector<LoopResult> load_run_results(const std::filesystem::path& run_dir);

}  // namespace refloop
