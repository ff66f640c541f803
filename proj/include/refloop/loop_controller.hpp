#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"
#include "refloop/actor.hpp"
#include "refloop/corpus_index.hpp"
#include "refloop/experience.hpp"
#include "refloop/llm_gateway.hpp"
#include "refloop/task.hpp"

namespace refloop {

enum class LoopMode {
  full,
  no_reflect_no_experience,  // single retrieve + generate pass
  no_evaluator,              // scores hidden from the loop, runs to max_iter
};

enum class FinalPick { best, last };

enum class StopReason { exact_match, stagnation, max_iter, backend_error, task_error };

std::string_view to_string(LoopMode mode);
LoopMode loop_mode_from_string(std::string_view s);
std::string_view to_string(FinalPick pick);
FinalPick final_pick_from_string(std::string_view s);
std::string_view to_string(StopReason reason);
StopReason stop_reason_from_string(std::string_view s);

struct LoopConfig {
  int max_iter = 10;
  int no_imp_thres = 3;
  double es_epsilon = 0.01;
  int n = 10;                  // retrieval target lines
  int k = 10;                  // snippets per prompt
  std::optional<int> x_cap;    // suggestion lines in a target; defaults to n / 2
  LoopMode mode = LoopMode::full;
  FinalPick final_pick = FinalPick::best;
  bool blind = false;          // withhold ground truth from the loop and the backends
  PromptOptions prompt;
  GenerationParams actor_params{128, 0.0, {}};
  GenerationParams reflector_params{512, 0.0, {}};

  [[nodiscard]] int effective_x_cap() const { return x_cap.value_or(n / 2); }
  /// True when scores steer the loop (neither no_evaluator nor blind).
  [[nodiscard]] bool evaluator_enabled() const { return mode != LoopMode::no_evaluator && !blind; }

  /// Throws std::invalid_argument on out-of-range values.
  void validate() const;
};

void to_json(nlohmann::json& j, const LoopConfig& c);
void from_json(const nlohmann::json& j, LoopConfig& c);

struct LoopResult {
  std::string task_id;
  std::string repo_name;
  IterationRecord final_record;  // iteration == -1 when nothing completed
  int last_iteration = -1;
  StopReason stop_reason = StopReason::max_iter;
  int iterations_run = 0;
  int best_em = 0;
  double best_es = 0.0;
  std::string error;
};

struct Gateways {
  Gateway& actor;
  Gateway& reflector;
};

/// Receives each iteration as soon as it is complete.
class IterationSink {
 public:
  virtual ~IterationSink() = default;
  virtual void on_iteration(const IterationRecord& rec) = 0;
};

/// Retrieve, generate, evaluate and reflect until an exact match, stagnation
/// or max_iter. Backend failures end the task with stop_reason backend_error.
LoopResult run_task(const CompletionTask& task, const CorpusIndex& index, Gateways gateways,
                    const LoopConfig& config, ExperienceCache& experience, IterationSink* sink = nullptr);

}  // namespace refloop
