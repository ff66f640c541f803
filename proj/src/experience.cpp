#include "refloop/experience.hpp"

#include <fmt/format.h>

namespace refloop {

void to_json(nlohmann::json& j, const Feedback& fb) {
  j = {{"evaluation_analysis", fb.evaluation_analysis},
       {"contextual_analysis", fb.contextual_analysis},
       {"suggestions", fb.suggestions},
       {"raw", fb.raw}};
}

void from_json(const nlohmann::json& j, Feedback& fb) {
  j.at("evaluation_analysis").get_to(fb.evaluation_analysis);
  j.at("contextual_analysis").get_to(fb.contextual_analysis);
  j.at("suggestions").get_to(fb.suggestions);
  j.at("raw").get_to(fb.raw);
}

void to_json(nlohmann::json& j, const IterationRecord& rec) {
  auto trace = nlohmann::json::array();
  for (const auto& t : rec.retrieval_trace) {
    trace.push_back({{"file_path", t.file_path},
                     {"start_line", t.start_line},
                     {"end_line", t.end_line},
                     {"score", t.score}});
  }
  j = {{"iteration", rec.iteration},
       {"target_lines", rec.target_lines},
       {"feedback_line_count", rec.feedback_line_count},
       {"retrieval_trace", std::move(trace)},
       {"prompt_rendered", rec.prompt_rendered},
       {"raw_generation", rec.raw_generation},
       {"generated_line", rec.generated_line},
       {"em", rec.em},
       {"es", rec.es},
       {"feedback", rec.feedback ? nlohmann::json(*rec.feedback) : nlohmann::json(nullptr)},
       {"no_imp_cnt", rec.no_imp_cnt},
       {"best_es", rec.best_es}};
}

void from_json(const nlohmann::json& j, IterationRecord& rec) {
  j.at("iteration").get_to(rec.iteration);
  j.at("target_lines").get_to(rec.target_lines);
  j.at("feedback_line_count").get_to(rec.feedback_line_count);
  rec.retrieval_trace.clear();
  for (const auto& t : j.at("retrieval_trace")) {
    rec.retrieval_trace.push_back({t.at("file_path").get<std::string>(), t.at("start_line").get<int>(),
                                   t.at("end_line").get<int>(), t.at("score").get<double>()});
  }
  j.at("prompt_rendered").get_to(rec.prompt_rendered);
  j.at("raw_generation").get_to(rec.raw_generation);
  j.at("generated_line").get_to(rec.generated_line);
  j.at("em").get_to(rec.em);
  j.at("es").get_to(rec.es);
  const auto& fb = j.at("feedback");
  if (fb.is_null()) {
    rec.feedback.reset();
  } else {
    rec.feedback = fb.get<Feedback>();
  }
  j.at("no_imp_cnt").get_to(rec.no_imp_cnt);
  j.at("best_es").get_to(rec.best_es);
}

void ExperienceCache::record(const std::string& task_id, IterationRecord rec) {
  std::lock_guard lock(mu_);
  auto& list = by_task_[task_id];
  if (rec.iteration != static_cast<int>(list.size())) {
    throw ContractViolation(fmt::format("task {}: expected iteration {}, got {}", task_id, list.size(),
                                        rec.iteration));
  }
  list.push_back(std::move(rec));
}

std::vector<std::string> ExperienceCache::latest_suggestions(const std::string& task_id) const {
  std::lock_guard lock(mu_);
  const auto it = by_task_.find(task_id);
  if (it == by_task_.end()) return {};
  for (auto r = it->second.rbegin(); r != it->second.rend(); ++r) {
    if (r->feedback && !r->feedback->suggestions.empty()) return r->feedback->suggestions;
  }
  return {};
}

IterationRecord ExperienceCache::best(const std::string& task_id) const {
  std::lock_guard lock(mu_);
  const auto it = by_task_.find(task_id);
  if (it == by_task_.end() || it->second.empty()) {
    throw NotRun(fmt::format("task {} has no recorded iterations", task_id));
  }
  const IterationRecord* best = &it->second.front();
  for (const auto& r : it->second) {
    if (r.em > best->em || (r.em == best->em && r.es > best->es)) best = &r;
  }
  return *best;
}

std::vector<IterationRecord> ExperienceCache::records(const std::string& task_id) const {
  std::lock_guard lock(mu_);
  const auto it = by_task_.find(task_id);
  return it == by_task_.end() ? std::vector<IterationRecord>{} : it->second;
}

std::size_t ExperienceCache::count(const std::string& task_id) const {
  std::lock_guard lock(mu_);
  const auto it = by_task_.find(task_id);
  return it == by_task_.end() ? 0 : it->second.size();
}

}  // namespace refloop
