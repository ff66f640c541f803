#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "refloop/llm_gateway.hpp"
#include "refloop/retriever.hpp"

namespace refloop {

inline constexpr std::string_view kActorTemplateVersion = "actor-prompt/1";

enum class SnippetOrder { descending, ascending };

std::string_view to_string(SnippetOrder order);
SnippetOrder snippet_order_from_string(std::string_view s);

struct SnippetBlock {
  std::string file_path;
  int start_line = 0;
  int end_line = 0;
  std::string text;
  double score = 0.0;
};

struct CompletionPrompt {
  std::vector<SnippetBlock> snippet_blocks;  // in rendered order
  std::vector<std::string> prefix_tail;
  std::string rendered;
};

struct PromptOptions {
  std::size_t budget = 6000;  // characters (bytes) of the rendered prompt
  int prefix_tail_len = 30;
  SnippetOrder order = SnippetOrder::descending;
};

struct GenerationParams {
  int max_new_tokens = 128;
  double temperature = 0.0;
  std::vector<std::string> stop_sequences;
};

/// Renders "# path:start-end" headed snippet blocks separated by blank lines,
/// then the last `prefix_tail_len` prefix lines verbatim. Snippets are kept
/// best-score-first until the budget is reached.
CompletionPrompt assemble_completion_prompt(std::span<const RetrievedSnippet> snippets,
                                            std::span<const std::string> prefix_lines,
                                            const PromptOptions& options);

/// Raw backend text. Empty prompts are not sent and yield "".
std::string generate_completion(Gateway& gateway, const CompletionPrompt& prompt,
                                const GenerationParams& params,
                                const std::optional<std::string>& ground_truth = std::nullopt);

/// First non-blank line of `raw`, skipping markdown fence lines.
std::string postprocess_line(std::string_view raw);

}  // namespace refloop
