#include "refloop/task.hpp"

#include <fstream>
#include <stdexcept>

#include <fmt/format.h>

namespace refloop {

void to_json(nlohmann::json& j, const CompletionTask& t) {
  j = {{"task_id", t.task_id},
       {"repo_name", t.repo_name},
       {"file_path", t.file_path},
       {"line_no", t.line_no},
       {"prefix", t.prefix},
       {"ground_truth", t.ground_truth},
       {"created_meta", {{"sampler_seed", t.sampler_seed}, {"repo_fingerprint", t.repo_fingerprint}}}};
}

void from_json(const nlohmann::json& j, CompletionTask& t) {
  j.at("task_id").get_to(t.task_id);
  j.at("repo_name").get_to(t.repo_name);
  j.at("file_path").get_to(t.file_path);
  j.at("line_no").get_to(t.line_no);
  j.at("prefix").get_to(t.prefix);
  j.at("ground_truth").get_to(t.ground_truth);
  if (j.contains("created_meta")) {
    const auto& meta = j["created_meta"];
    t.sampler_seed = meta.value("sampler_seed", std::uint64_t{0});
    t.repo_fingerprint = meta.value("repo_fingerprint", "");
  }
}

void write_tasks_jsonl(std::ostream& out, const std::vector<CompletionTask>& tasks) {
  for (const auto& t : tasks) out << nlohmann::json(t).dump() << '\n';
}

std::vector<CompletionTask> read_tasks_jsonl(std::istream& in) {
  std::vector<CompletionTask> tasks;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      tasks.push_back(nlohmann::json::parse(line).get<CompletionTask>());
    } catch (const nlohmann::json::exception& ex) {
      throw std::runtime_error(fmt::format("task line {}: {}", lineno, ex.what()));
    }
  }
  return tasks;
}

std::vector<CompletionTask> read_tasks_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open task file '{}'", path.string()));
  return read_tasks_jsonl(in);
}

std::string task_file_stem(const std::string& task_id) {
  std::string out;
  for (char c : task_id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                    c == '_' || c == '.';
    out += ok ? c : '_';
  }
  if (out.empty() || out.front() == '.') out.insert(out.begin(), '_');
  return out;
}

}  // namespace refloop
