#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

namespace refloop {

/// One line-completion sample: the file prefix and the hidden next line.
struct CompletionTask {
  std::string task_id;
  std::string repo_name;
  std::string file_path;  // repo-relative
  int line_no = 1;        // 1-based target line
  std::vector<std::string> prefix;
  std::string ground_truth;
  std::uint64_t sampler_seed = 0;
  std::string repo_fingerprint;

  friend bool operator==(const CompletionTask&, const CompletionTask&) = default;
};

void to_json(nlohmann::json& j, const CompletionTask& t);
void from_json(const nlohmann::json& j, CompletionTask& t);

void write_tasks_jsonl(std::ostream& out, const std::vector<CompletionTask>& tasks);
std::vector<CompletionTask> read_tasks_jsonl(std::istream& in);
std::vector<CompletionTask> read_tasks_jsonl(const std::filesystem::path& path);

/// File-name-safe form of a task id.
std::string task_file_stem(const std::string& task_id);

}  // namespace refloop
