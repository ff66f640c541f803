#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "refloop/reflector.hpp"

namespace refloop {

struct RetrievalTraceEntry {
  std::string file_path;
  int start_line = 0;
  int end_line = 0;
  double score = 0.0;

  friend bool operator==(const RetrievalTraceEntry&, const RetrievalTraceEntry&) = default;
};

/// One pass of the loop. `no_imp_cnt` and `best_es` hold the controller
/// state after this pass so a log replay can be checked against it.
struct IterationRecord {
  int iteration = 0;
  std::vector<std::string> target_lines;
  int feedback_line_count = 0;
  std::vector<RetrievalTraceEntry> retrieval_trace;
  std::string prompt_rendered;
  std::string raw_generation;
  std::string generated_line;
  int em = 0;
  double es = 0.0;
  std::optional<Feedback> feedback;
  int no_imp_cnt = 0;
  double best_es = 0.0;

  friend bool operator==(const IterationRecord&, const IterationRecord&) = default;
};

void to_json(nlohmann::json& j, const Feedback& fb);
void from_json(const nlohmann::json& j, Feedback& fb);
void to_json(nlohmann::json& j, const IterationRecord& rec);
void from_json(const nlohmann::json& j, IterationRecord& rec);

class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NotRun : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Append-only per-task iteration history. Safe for one writer per task with
/// concurrent writers on distinct tasks.
class ExperienceCache {
 public:
  /// Throws ContractViolation unless rec.iteration equals the current count.
  void record(const std::string& task_id, IterationRecord rec);

  /// Suggestions of the most recent record carrying non-empty feedback suggestions.
  [[nodiscard]] std::vector<std::string> latest_suggestions(const std::string& task_id) const;

  /// Record maximizing (em, es); the earliest iteration wins ties. Throws NotRun when empty.
  [[nodiscard]] IterationRecord best(const std::string& task_id) const;

  [[nodiscard]] std::vector<IterationRecord> records(const std::string& task_id) const;
  [[nodiscard]] std::size_t count(const std::string& task_id) const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::vector<IterationRecord>> by_task_;
};

}  // namespace refloop
