#include "refloop/run_log.hpp"

#include <stdexcept>

#include <fmt/format.h>

namespace refloop {
namespace {

nlohmann::json header_json(const CompletionTask& task) {
  return {{"kind", "header"},
          {"schema", kRunLogSchema},
          {"task_id", task.task_id},
          {"repo_name", task.repo_name},
          {"file_path", task.file_path},
          {"line_no", task.line_no}};
}

nlohmann::json result_json(const LoopResult& r) {
  return {{"kind", "result"},
          {"task_id", r.task_id},
          {"repo_name", r.repo_name},
          {"stop_reason", to_string(r.stop_reason)},
          {"iterations_run", r.iterations_run},
          {"final_iteration", r.final_record.iteration},
          {"last_iteration", r.last_iteration},
          {"final_em", r.final_record.em},
          {"final_es", r.final_record.es},
          {"final_generated_line", r.final_record.generated_line},
          {"best_em", r.best_em},
          {"best_es", r.best_es},
          {"error", r.error}};
}

nlohmann::json iteration_json(const IterationRecord& rec) {
  nlohmann::json j = rec;
  j["kind"] = "iteration";
  return j;
}

}  // namespace

RunLogWriter::RunLogWriter(const std::filesystem::path& path, const CompletionTask& task)
    : out_(path, std::ios::trunc) {
  if (!out_) throw std::runtime_error(fmt::format("cannot write run log '{}'", path.string()));
  out_ << header_json(task).dump() << '\n' << std::flush;
}

void RunLogWriter::on_iteration(const IterationRecord& rec) {
  out_ << iteration_json(rec).dump() << '\n' << std::flush;
}

void RunLogWriter::finish(const LoopResult& result) {
  out_ << result_json(result).dump() << '\n' << std::flush;
}

void write_run_log(const std::filesystem::path& path, const CompletionTask& task,
                   const std::vector<IterationRecord>& records, const LoopResult& result) {
  RunLogWriter writer(path, task);
  for (const auto& r : records) writer.on_iteration(r);
  writer.finish(result);
}

RunLog read_run_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open run log '{}'", path.string()));
  RunLog log;
  std::string line;
  int lineno = 0;
  std::optional<nlohmann::json> result;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      // A torn final line from an interrupted write ends the readable prefix.
      break;
    }
    const auto kind = j.value("kind", "");
    if (kind == "header") {
      if (j.value("schema", "") != kRunLogSchema) {
        throw std::runtime_error(fmt::format("{}: unsupported run log schema", path.string()));
      }
      log.header = std::move(j);
    } else if (kind == "iteration") {
      log.records.push_back(j.get<IterationRecord>());
    } else if (kind == "result") {
      result = std::move(j);
    } else {
      throw std::runtime_error(fmt::format("{}:{}: unknown record kind '{}'", path.string(), lineno, kind));
    }
  }
  if (log.header.is_null()) throw std::runtime_error(fmt::format("{}: missing header", path.string()));

  if (result) {
    LoopResult r;
    r.task_id = result->at("task_id").get<std::string>();
    r.repo_name = result->at("repo_name").get<std::string>();
    r.stop_reason = stop_reason_from_string(result->at("stop_reason").get<std::string>());
    r.iterations_run = result->at("iterations_run").get<int>();
    r.last_iteration = result->at("last_iteration").get<int>();
    r.best_em = result->at("best_em").get<int>();
    r.best_es = result->at("best_es").get<double>();
    r.error = result->at("error").get<std::string>();
    const int final_iteration = result->at("final_iteration").get<int>();
    if (final_iteration >= 0 && final_iteration < static_cast<int>(log.records.size())) {
      r.final_record = log.records[static_cast<std::size_t>(final_iteration)];
    } else {
      r.final_record.iteration = -1;
    }
    log.result = std::move(r);
  }
  return log;
}

}  // namespace refloop
