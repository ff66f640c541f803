#include "refloop/loop_controller.hpp"

#include <stdexcept>

#include <fmt/format.h>

#include "refloop/metrics.hpp"
#include "refloop/reflector.hpp"
#include "refloop/retriever.hpp"

namespace refloop {

std::string_view to_string(LoopMode mode) {
  switch (mode) {
    case LoopMode::full: return "full";
    case LoopMode::no_reflect_no_experience: return "no-reflect";
    case LoopMode::no_evaluator: return "no-evaluator";
  }
  return "?";
}

LoopMode loop_mode_from_string(std::string_view s) {
  if (s == "full") return LoopMode::full;
  if (s == "no-reflect" || s == "no_reflect_no_experience") return LoopMode::no_reflect_no_experience;
  if (s == "no-evaluator" || s == "no_evaluator") return LoopMode::no_evaluator;
  throw std::invalid_argument(fmt::format("unknown loop mode '{}'", s));
}

std::string_view to_string(FinalPick pick) { return pick == FinalPick::best ? "best" : "last"; }

FinalPick final_pick_from_string(std::string_view s) {
  if (s == "best") return FinalPick::best;
  if (s == "last") return FinalPick::last;
  throw std::invalid_argument(fmt::format("unknown final pick '{}'", s));
}

std::string_view to_string(StopReason reason) {
  switch (reason) {
    case StopReason::exact_match: return "exact_match";
    case StopReason::stagnation: return "stagnation";
    case StopReason::max_iter: return "max_iter";
    case StopReason::backend_error: return "backend_error";
    case StopReason::task_error: return "task_error";
  }
  return "?";
}

StopReason stop_reason_from_string(std::string_view s) {
  if (s == "exact_match") return StopReason::exact_match;
  if (s == "stagnation") return StopReason::stagnation;
  if (s == "max_iter") return StopReason::max_iter;
  if (s == "backend_error") return StopReason::backend_error;
  if (s == "task_error") return StopReason::task_error;
  throw std::invalid_argument(fmt::format("unknown stop reason '{}'", s));
}

void LoopConfig::validate() const {
  if (max_iter < 1) throw std::invalid_argument("max_iter must be >= 1");
  if (no_imp_thres < 1) throw std::invalid_argument("no_imp_thres must be >= 1");
  if (!(es_epsilon > 0.0 && es_epsilon < 1.0)) throw std::invalid_argument("es_epsilon must be in (0, 1)");
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  const int cap = effective_x_cap();
  if (cap < 0 || cap > n) throw std::invalid_argument(fmt::format("x_cap must be in [0, n={}]", n));
  if (prompt.budget == 0) throw std::invalid_argument("prompt budget must be positive");
  if (prompt.prefix_tail_len < 1) throw std::invalid_argument("prefix_tail_len must be >= 1");
}

void to_json(nlohmann::json& j, const LoopConfig& c) {
  j = {{"max_iter", c.max_iter},
       {"no_imp_thres", c.no_imp_thres},
       {"es_epsilon", c.es_epsilon},
       {"n", c.n},
       {"k", c.k},
       {"x_cap", c.effective_x_cap()},
       {"mode", to_string(c.mode)},
       {"final", to_string(c.final_pick)},
       {"blind", c.blind},
       {"prompt_budget", c.prompt.budget},
       {"prefix_tail_len", c.prompt.prefix_tail_len},
       {"snippet_order", to_string(c.prompt.order)},
       {"actor_max_new_tokens", c.actor_params.max_new_tokens},
       {"reflector_max_new_tokens", c.reflector_params.max_new_tokens},
       {"temperature", c.actor_params.temperature}};
}

void from_json(const nlohmann::json& j, LoopConfig& c) {
  c.max_iter = j.at("max_iter").get<int>();
  c.no_imp_thres = j.at("no_imp_thres").get<int>();
  c.es_epsilon = j.at("es_epsilon").get<double>();
  c.n = j.at("n").get<int>();
  c.k = j.at("k").get<int>();
  c.x_cap = j.at("x_cap").get<int>();
  c.mode = loop_mode_from_string(j.at("mode").get<std::string>());
  c.final_pick = final_pick_from_string(j.at("final").get<std::string>());
  c.blind = j.at("blind").get<bool>();
  c.prompt.budget = j.at("prompt_budget").get<std::size_t>();
  c.prompt.prefix_tail_len = j.at("prefix_tail_len").get<int>();
  c.prompt.order = snippet_order_from_string(j.at("snippet_order").get<std::string>());
  c.actor_params.max_new_tokens = j.at("actor_max_new_tokens").get<int>();
  c.reflector_params.max_new_tokens = j.at("reflector_max_new_tokens").get<int>();
  c.actor_params.temperature = j.at("temperature").get<double>();
  c.reflector_params.temperature = c.actor_params.temperature;
}

LoopResult run_task(const CompletionTask& task, const CorpusIndex& index, Gateways gateways,
                    const LoopConfig& config, ExperienceCache& experience, IterationSink* sink) {
  config.validate();
  if (experience.count(task.task_id) != 0) {
    throw ContractViolation(fmt::format("task {} already has recorded iterations", task.task_id));
  }

  const int x_cap = config.effective_x_cap();
  const bool scored = config.evaluator_enabled();
  const bool reflecting = config.mode != LoopMode::no_reflect_no_experience;
  const int max_iter = reflecting ? config.max_iter : 1;
  const std::optional<std::string> hidden_truth =
      config.blind ? std::nullopt : std::optional<std::string>(task.ground_truth);

  LoopResult result;
  result.task_id = task.task_id;
  result.repo_name = task.repo_name;
  result.stop_reason = StopReason::max_iter;

  int best_em = 0;
  double best_es = 0.0;
  int no_imp_cnt = 0;

  auto commit = [&](IterationRecord rec) {
    experience.record(task.task_id, rec);
    if (sink) sink->on_iteration(rec);
  };

  for (int iter = 0; iter < max_iter; ++iter) {
    IterationRecord rec;
    rec.iteration = iter;

    const RetrievalTarget target =
        iter == 0 ? build_initial_target(task.prefix, config.n)
                  : build_feedback_target(experience.latest_suggestions(task.task_id), task.prefix, config.n, x_cap);
    rec.target_lines = target.lines;
    rec.feedback_line_count = target.feedback_line_count;

    const auto snippets = retrieve(index, target, config.k);
    for (const auto& s : snippets) {
      rec.retrieval_trace.push_back({s.chunk.file_path, s.chunk.start_line, s.chunk.end_line, s.score});
    }
    const auto prompt = assemble_completion_prompt(snippets, task.prefix, config.prompt);
    rec.prompt_rendered = prompt.rendered;

    try {
      rec.raw_generation = generate_completion(gateways.actor, prompt, config.actor_params, hidden_truth);
    } catch (const BackendUnavailable& ex) {
      result.stop_reason = StopReason::backend_error;
      result.error = fmt::format("task {}: actor: {}", task.task_id, ex.what());
      break;
    }
    rec.generated_line = postprocess_line(rec.raw_generation);
    const auto eval = evaluate(rec.generated_line, task.ground_truth);
    rec.em = eval.em;
    rec.es = eval.es;

    if (scored) {
      if (rec.em == 1) {
        rec.no_imp_cnt = no_imp_cnt;
        rec.best_es = best_es;
        commit(std::move(rec));
        result.stop_reason = StopReason::exact_match;
        break;
      }
      if (rec.es - best_es < config.es_epsilon) {
        ++no_imp_cnt;
      } else {
        no_imp_cnt = 0;
        best_em = rec.em;
        best_es = rec.es;
      }
      rec.no_imp_cnt = no_imp_cnt;
      rec.best_es = best_es;
      if (no_imp_cnt >= config.no_imp_thres) {
        commit(std::move(rec));
        result.stop_reason = StopReason::stagnation;
        break;
      }
    }

    if (reflecting) {
      const auto reflection = assemble_reflection_prompt(prompt.rendered, rec.generated_line, rec.em, rec.es, scored);
      try {
        rec.feedback = parse_feedback(reflect(gateways.reflector, reflection, config.reflector_params), x_cap);
      } catch (const BackendUnavailable& ex) {
        commit(std::move(rec));
        result.stop_reason = StopReason::backend_error;
        result.error = fmt::format("task {}: reflector: {}", task.task_id, ex.what());
        break;
      }
    }
    commit(std::move(rec));
  }

  const auto history = experience.records(task.task_id);
  result.iterations_run = static_cast<int>(history.size());
  result.best_em = best_em;
  result.best_es = best_es;
  if (history.empty()) {
    result.final_record.iteration = -1;
  } else {
    result.last_iteration = history.back().iteration;
    result.final_record =
        (config.final_pick == FinalPick::best && scored) ? experience.best(task.task_id) : history.back();
  }
  return result;
}

}  // namespace refloop
