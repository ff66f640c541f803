#include "refloop/reflector.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <optional>

#include <fmt/format.h>

#include "refloop/corpus_index.hpp"
#include "refloop/metrics.hpp"

namespace refloop {
namespace {

enum class Section { none, evaluation, contextual, suggestions };

constexpr std::array<std::string_view, 30> kKeywords = {
    "def",    "class",    "return", "import", "from",   "if",     "elif",  "else",     "for",   "while",
    "with",   "try",      "except", "finally", "raise", "yield",  "lambda", "assert",  "pass",  "break",
    "continue", "async",  "await",  "global", "nonlocal", "del",  "self",  "print",    "not",   "is"};

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

// Drops markdown decoration around a header line: leading '#', '*', '_',
// list numbering, and surrounding whitespace.
std::string_view strip_decoration(std::string_view s) {
  auto is_deco = [](char c) { return c == '#' || c == '*' || c == '_' || c == ' ' || c == '\t' || c == '>'; };
  while (!s.empty() && is_deco(s.front())) s.remove_prefix(1);
  std::size_t digits = 0;
  while (digits < s.size() && std::isdigit(static_cast<unsigned char>(s[digits]))) ++digits;
  if (digits > 0 && digits < s.size() && (s[digits] == '.' || s[digits] == ')')) {
    s.remove_prefix(digits + 1);
    while (!s.empty() && is_deco(s.front())) s.remove_prefix(1);
  }
  return s;
}

// If `line` opens a section, returns it plus any text after the header.
std::optional<std::pair<Section, std::string>> match_header(std::string_view line) {
  const auto body = strip_decoration(line);
  const auto low = lower(body);
  constexpr std::array<std::pair<std::string_view, Section>, 3> headers = {{
      {kEvaluationHeader, Section::evaluation},
      {kContextualHeader, Section::contextual},
      {kSuggestionsHeader, Section::suggestions},
  }};
  for (const auto& [name, section] : headers) {
    const auto lname = lower(name);
    if (!low.starts_with(lname)) continue;
    std::string_view rest = body.substr(name.size());
    // Header text must end here or be followed by ':' / markdown emphasis.
    while (!rest.empty() && (rest.front() == '*' || rest.front() == '_' || rest.front() == ' ')) rest.remove_prefix(1);
    if (!rest.empty() && rest.front() != ':') {
      if (std::isalnum(static_cast<unsigned char>(rest.front()))) continue;
    }
    if (!rest.empty() && rest.front() == ':') rest.remove_prefix(1);
    while (!rest.empty() && (rest.front() == '*' || rest.front() == '_')) rest.remove_prefix(1);
    return std::make_pair(section, normalize(rest));
  }
  return std::nullopt;
}

bool is_fence(std::string_view stripped) { return stripped.starts_with("```"); }

// Removes list bullets / numbering and inline backticks around a suggestion line.
std::string clean_suggestion(std::string_view line) {
  std::string s = normalize(line);
  if (s.starts_with("- ") || s.starts_with("* ") || s.starts_with("+ ")) {
    s = normalize(std::string_view(s).substr(2));
  } else if (s.starts_with("•")) {
    s = normalize(std::string_view(s).substr(3));
  } else {
    std::size_t digits = 0;
    while (digits < s.size() && std::isdigit(static_cast<unsigned char>(s[digits]))) ++digits;
    if (digits > 0 && digits + 1 < s.size() && (s[digits] == '.' || s[digits] == ')') && s[digits + 1] == ' ') {
      s = normalize(std::string_view(s).substr(digits + 2));
    }
  }
  if (s.size() >= 2 && s.front() == '`' && s.back() == '`' && s.find('`', 1) == s.size() - 1) {
    s = normalize(std::string_view(s).substr(1, s.size() - 2));
  }
  return s;
}

bool looks_like_code(std::string_view stripped) {
  if (stripped.find_first_of("=():.") != std::string_view::npos) return true;
  std::size_t end = 0;
  while (end < stripped.size() &&
         (std::isalnum(static_cast<unsigned char>(stripped[end])) || stripped[end] == '_')) {
    ++end;
  }
  const auto first = stripped.substr(0, end);
  return std::find(kKeywords.begin(), kKeywords.end(), first) != kKeywords.end();
}

void append_text(std::string& dst, std::string_view text) {
  if (text.empty()) return;
  if (!dst.empty()) dst += '\n';
  dst += text;
}

}  // namespace

std::string assemble_reflection_prompt(std::string_view initial_prompt, std::string_view generated, int em,
                                       double es, bool scores_visible) {
  std::string out;
  out += "You are reviewing a single-line code completion.\n\n";
  out += "### Completion prompt\n";
  out += initial_prompt;
  out += "\n\n### Generated code\n";
  out += normalize(generated).empty() ? std::string("(empty)") : std::string(generated);
  out += "\n\n";
  if (scores_visible) {
    out += "### Evaluation\n";
    out += fmt::format("EM: {}\nES: {:.2f}\n\n", em, es);
  }
  out += "Answer with exactly three labeled sections:\n";
  out += fmt::format("{}: ", kEvaluationHeader);
  out += scores_visible ? "what the scores say about the generated code.\n"
                        : "how close the generated code likely is to the intended line.\n";
  out += fmt::format("{}: the syntax and semantics of the surrounding code.\n", kContextualHeader);
  out += fmt::format(
      "{}: corrected or improved code, one plain code line per line, no prose and no bullets.\n",
      kSuggestionsHeader);
  return out;
}

std::string reflect(Gateway& gateway, const std::string& prompt, const GenerationParams& params) {
  GenRequest req;
  req.role = RoleTag::reflector;
  req.prompt = prompt;
  req.max_new_tokens = params.max_new_tokens;
  req.temperature = params.temperature;
  req.stop_sequences = params.stop_sequences;
  return gateway.generate(req).text;
}

Feedback parse_feedback(std::string_view raw, int x_cap) {
  Feedback fb;
  fb.raw = std::string(raw);
  const auto cap = static_cast<std::size_t>(std::max(x_cap, 0));
  const auto lines = split_lines(raw);

  bool any_header = false;
  Section current = Section::none;
  for (const auto& line : lines) {
    if (auto header = match_header(line)) {
      any_header = true;
      current = header->first;
      const std::string& rest = header->second;
      if (current == Section::evaluation) append_text(fb.evaluation_analysis, rest);
      if (current == Section::contextual) append_text(fb.contextual_analysis, rest);
      if (current == Section::suggestions && !rest.empty() && !is_fence(rest)) {
        auto s = clean_suggestion(rest);
        if (!s.empty()) fb.suggestions.push_back(std::move(s));
      }
      continue;
    }
    const auto stripped = normalize(line);
    switch (current) {
      case Section::none:
        break;
      case Section::evaluation:
        append_text(fb.evaluation_analysis, stripped);
        break;
      case Section::contextual:
        append_text(fb.contextual_analysis, stripped);
        break;
      case Section::suggestions: {
        if (stripped.empty() || is_fence(stripped)) break;
        auto s = clean_suggestion(stripped);
        if (!s.empty()) fb.suggestions.push_back(std::move(s));
        break;
      }
    }
  }

  if (!any_header) {
    for (const auto& line : lines) {
      const auto stripped = normalize(line);
      if (stripped.empty() || is_fence(stripped)) continue;
      auto s = clean_suggestion(stripped);
      if (!s.empty() && looks_like_code(s)) fb.suggestions.push_back(std::move(s));
    }
  }
  if (fb.suggestions.size() > cap) fb.suggestions.resize(cap);
  return fb;
}

std::string render_feedback(const Feedback& fb) {
  std::string out;
  out += fmt::format("{}:\n{}\n\n", kEvaluationHeader, fb.evaluation_analysis);
  out += fmt::format("{}:\n{}\n\n", kContextualHeader, fb.contextual_analysis);
  out += fmt::format("{}:\n", kSuggestionsHeader);
  for (const auto& s : fb.suggestions) out += s + "\n";
  return out;
}

}  // namespace refloop
