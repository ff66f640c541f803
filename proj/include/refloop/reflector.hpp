#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "refloop/actor.hpp"
#include "refloop/llm_gateway.hpp"

namespace refloop {

inline constexpr std::string_view kReflectorTemplateVersion = "reflector-prompt/1";

inline constexpr std::string_view kEvaluationHeader = "Evaluation Analysis";
inline constexpr std::string_view kContextualHeader = "Contextual Analysis";
inline constexpr std::string_view kSuggestionsHeader = "Specific Suggestions";

struct Feedback {
  std::string evaluation_analysis;
  std::string contextual_analysis;
  std::vector<std::string> suggestions;  // stripped, non-empty code lines
  std::string raw;

  friend bool operator==(const Feedback&, const Feedback&) = default;
};

/// Initial prompt, generated code, and (when visible) the EM/ES scores,
/// followed by the three-section answer instructions.
std::string assemble_reflection_prompt(std::string_view initial_prompt, std::string_view generated, int em,
                                       double es, bool scores_visible);

std::string reflect(Gateway& gateway, const std::string& prompt, const GenerationParams& params);

/// Total parser: splits on the three section headers (case-insensitive) or,
/// when none is present, keeps code-looking lines as suggestions.
Feedback parse_feedback(std::string_view raw, int x_cap);

/// Renders a well-formed three-section reply for `fb`.
std::string render_feedback(const Feedback& fb);

}  // namespace refloop
