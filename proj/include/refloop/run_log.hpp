#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string_view>
#include <vector>

#include "refloop/loop_controller.hpp"

namespace refloop {

inline constexpr std::string_view kRunLogSchema = "refloop.runlog/1";

/// Line-delimited JSON log for one task: a header record, one record per
/// iteration (flushed as written), and a closing result record.
class RunLogWriter : public IterationSink {
 public:
  RunLogWriter(const std::filesystem::path& path, const CompletionTask& task);

  void on_iteration(const IterationRecord& rec) override;
  void finish(const LoopResult& result);

 private:
  std::ofstream out_;
};

struct RunLog {
  nlohmann::json header;
  std::vector<IterationRecord> records;
  std::optional<LoopResult> result;  // absent for interrupted runs
};

RunLog read_run_log(const std::filesystem::path& path);

/// Writes a complete log in one go.
void write_run_log(const std::filesystem::path& path, const CompletionTask& task,
                   const std::vector<IterationRecord>& records, const LoopResult& result);

}  // namespace refloop
