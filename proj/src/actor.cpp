#include "refloop/actor.hpp"

#include <algorithm>
#include <stdexcept>

#include <fmt/format.h>

#include "refloop/corpus_index.hpp"
#include "refloop/metrics.hpp"

namespace refloop {
namespace {

constexpr std::string_view kSeparator = "\n\n";

std::string render_block(const SnippetBlock& b) {
  return fmt::format("# {}:{}-{}\n{}", b.file_path, b.start_line, b.end_line, b.text);
}

std::string join(std::span<const std::string> lines) {
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out += '\n';
    out += lines[i];
  }
  return out;
}

// Keeps the last `budget` bytes, moved forward to a UTF-8 boundary.
std::string keep_tail_bytes(const std::string& s, std::size_t budget) {
  if (s.size() <= budget) return s;
  std::size_t from = s.size() - budget;
  while (from < s.size() && (static_cast<unsigned char>(s[from]) & 0xC0) == 0x80) ++from;
  return s.substr(from);
}

}  // namespace

std::string_view to_string(SnippetOrder order) {
  return order == SnippetOrder::descending ? "desc" : "asc";
}

SnippetOrder snippet_order_from_string(std::string_view s) {
  if (s == "desc") return SnippetOrder::descending;
  if (s == "asc") return SnippetOrder::ascending;
  throw std::invalid_argument(fmt::format("unknown snippet order '{}'", s));
}

CompletionPrompt assemble_completion_prompt(std::span<const RetrievedSnippet> snippets,
                                            std::span<const std::string> prefix_lines,
                                            const PromptOptions& options) {
  if (options.budget == 0) throw std::invalid_argument("prompt budget must be positive");
  if (options.prefix_tail_len < 1) throw std::invalid_argument("prefix_tail_len must be >= 1");

  CompletionPrompt prompt;
  const auto tail_len = std::min(prefix_lines.size(), static_cast<std::size_t>(options.prefix_tail_len));
  prompt.prefix_tail.assign(prefix_lines.end() - static_cast<std::ptrdiff_t>(tail_len), prefix_lines.end());

  // The tail shrinks from the top, never below its final line.
  std::string tail = join(prompt.prefix_tail);
  while (tail.size() > options.budget && prompt.prefix_tail.size() > 1) {
    prompt.prefix_tail.erase(prompt.prefix_tail.begin());
    tail = join(prompt.prefix_tail);
  }
  if (tail.size() > options.budget) {
    tail = keep_tail_bytes(tail, options.budget);
    prompt.prefix_tail.back() = tail;
  }

  std::vector<std::size_t> ranked(snippets.size());
  for (std::size_t i = 0; i < ranked.size(); ++i) ranked[i] = i;
  std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
    const auto& sa = snippets[a];
    const auto& sb = snippets[b];
    if (sa.score != sb.score) return sa.score > sb.score;
    if (sa.chunk.file_path != sb.chunk.file_path) return sa.chunk.file_path < sb.chunk.file_path;
    return sa.chunk.start_line < sb.chunk.start_line;
  });

  std::vector<std::string> rendered_blocks;
  std::size_t used = tail.size();
  for (const auto i : ranked) {
    const auto& s = snippets[i];
    SnippetBlock block{s.chunk.file_path, s.chunk.start_line, s.chunk.end_line, s.chunk.text, s.score};
    std::string text = render_block(block);
    const bool needs_separator = !rendered_blocks.empty() || !tail.empty();
    const std::size_t cost = text.size() + (needs_separator ? kSeparator.size() : 0);
    if (used + cost > options.budget) break;
    used += cost;
    prompt.snippet_blocks.push_back(std::move(block));
    rendered_blocks.push_back(std::move(text));
  }
  if (options.order == SnippetOrder::ascending) {
    std::reverse(prompt.snippet_blocks.begin(), prompt.snippet_blocks.end());
    std::reverse(rendered_blocks.begin(), rendered_blocks.end());
  }

  std::string out;
  for (const auto& b : rendered_blocks) {
    if (!out.empty()) out += kSeparator;
    out += b;
  }
  if (!tail.empty()) {
    if (!out.empty()) out += kSeparator;
    out += tail;
  }
  prompt.rendered = std::move(out);
  return prompt;
}

std::string generate_completion(Gateway& gateway, const CompletionPrompt& prompt,
                                const GenerationParams& params,
                                const std::optional<std::string>& ground_truth) {
  if (prompt.rendered.empty()) return {};
  GenRequest req;
  req.role = RoleTag::actor;
  req.prompt = prompt.rendered;
  req.max_new_tokens = params.max_new_tokens;
  req.temperature = params.temperature;
  req.stop_sequences = params.stop_sequences;
  req.ground_truth = ground_truth;
  return gateway.generate(req).text;
}

std::string postprocess_line(std::string_view raw) {
  for (const auto& line : split_lines(raw)) {
    const auto stripped = normalize(line);
    if (stripped.empty() || stripped.starts_with("```")) continue;
    return line;
  }
  return {};
}

}  // namespace refloop
