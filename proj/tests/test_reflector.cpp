#include <random>

#include "doctest.h"
#include "refloop/metrics.hpp"
#include "refloop/reflector.hpp"
#include "support/fixtures.hpp"

using namespace refloop;

namespace {

constexpr std::string_view kWellFormed =
    "**Evaluation Analysis:** The completion misses the scaling factor.\n"
    "ES is high but not exact.\n"
    "\n"
    "**Contextual Analysis:** `factor` is computed from RATE above.\n"
    "\n"
    "**Specific Suggestions:**\n"
    "```python\n"
    "- factor = RATE * 2\n"
    "2. return scale(v, factor)\n"
    "```\n";

}  // namespace

TEST_CASE("reflection prompt with visible scores") {
  const auto p = assemble_reflection_prompt("PROMPT_BODY", "return v", 0, 0.8666, true);
  CHECK(p.find("EM: 0") != std::string::npos);
  CHECK(p.find("ES: 0.87") != std::string::npos);
  const auto a = p.find("PROMPT_BODY");
  const auto b = p.find("return v");
  const auto c = p.find("EM: 0");
  CHECK(a < b);
  CHECK(b < c);
  for (auto h : {kEvaluationHeader, kContextualHeader, kSuggestionsHeader}) CHECK(p.find(h) != std::string::npos);
}

TEST_CASE("reflection prompt without scores") {
  const auto p = assemble_reflection_prompt("PROMPT_BODY", "return v", 1, 1.0, false);
  CHECK(p.find("EM:") == std::string::npos);
  CHECK(p.find("ES:") == std::string::npos);
  CHECK(p.find("PROMPT_BODY") != std::string::npos);
}

TEST_CASE("empty generation is marked") {
  const auto p = assemble_reflection_prompt("PROMPT_BODY", "  ", 0, 0.0, true);
  CHECK(p.find("### Generated code\n(empty)\n") != std::string::npos);
}

TEST_CASE("reflection prompt matches the golden file") {
  const auto p = assemble_reflection_prompt("# pkg/core.py:1-1\nRATE = 0.5\n\ndef apply(v):", "    return v", 0, 0.5,
                                            true);
  CHECK(p == refloop::testing::read_file(std::string(REFLOOP_GOLDEN_DIR) + "/reflection_prompt.txt"));
}

TEST_CASE("parse a well-formed reply") {
  const auto fb = parse_feedback(kWellFormed, 5);
  CHECK(fb.evaluation_analysis == "The completion misses the scaling factor.\nES is high but not exact.");
  CHECK(fb.contextual_analysis == "`factor` is computed from RATE above.");
  CHECK(fb.suggestions == std::vector<std::string>{"factor = RATE * 2", "return scale(v, factor)"});
  CHECK(fb.raw == kWellFormed);
}

TEST_CASE("parse handles header variants") {
  const auto fb = parse_feedback(
      "## 1. evaluation analysis\nwrong\n### 2) CONTEXTUAL ANALYSIS\nctx\n### 3. Specific suggestions\n`y = 2`\n", 5);
  CHECK(fb.evaluation_analysis == "wrong");
  CHECK(fb.contextual_analysis == "ctx");
  CHECK(fb.suggestions == std::vector<std::string>{"y = 2"});
}

TEST_CASE("parse degenerate inputs") {
  const auto empty = parse_feedback("", 5);
  CHECK(empty.evaluation_analysis.empty());
  CHECK(empty.contextual_analysis.empty());
  CHECK(empty.suggestions.empty());
  CHECK(empty.raw.empty());

  const auto fallback = parse_feedback("I think you should write:\nx = compute(a)\nreturn x\nthanks", 5);
  CHECK(fallback.evaluation_analysis.empty());
  CHECK(fallback.contextual_analysis.empty());
  CHECK(fallback.suggestions == std::vector<std::string>{"I think you should write:", "x = compute(a)", "return x"});

  const auto two = parse_feedback("total = a + b\nreturn total\n", 5);
  CHECK(two.suggestions == std::vector<std::string>{"total = a + b", "return total"});
}

TEST_CASE("parse caps suggestions") {
  std::string raw = "Specific Suggestions:\n";
  for (int i = 0; i < 9; ++i) raw += "v" + std::to_string(i) + " = " + std::to_string(i) + "\n";
  CHECK(parse_feedback(raw, 5).suggestions.size() == 5);
  CHECK(parse_feedback(raw, 0).suggestions.empty());
  CHECK(parse_feedback(raw, 5).suggestions.front() == "v0 = 0");
}

TEST_CASE("render and parse round-trip") {
  std::mt19937 rng(8);
  const std::vector<std::string> words = {"value", "x", "=", "(", ")", "call", "the", "loop", "1", "."};
  auto phrase = [&](int max_words) {
    std::string s;
    const int n = 1 + static_cast<int>(rng() % max_words);
    for (int i = 0; i < n; ++i) {
      if (i) s += ' ';
      s += words[rng() % words.size()];
    }
    return s;
  };
  for (int trial = 0; trial < 300; ++trial) {
    Feedback fb;
    fb.evaluation_analysis = phrase(6);
    fb.contextual_analysis = phrase(6) + "\n" + phrase(4);
    const int n = static_cast<int>(rng() % 6);
    for (int i = 0; i < n; ++i) fb.suggestions.push_back("s" + std::to_string(i) + " = " + phrase(3));
    const auto text = render_feedback(fb);
    const auto back = parse_feedback(text, 5);
    CHECK(back.evaluation_analysis == fb.evaluation_analysis);
    CHECK(back.contextual_analysis == fb.contextual_analysis);
    CHECK(back.suggestions == fb.suggestions);
    CHECK(back.raw == text);
  }
}

TEST_CASE("parser is total and bounded on random text") {
  std::mt19937 rng(31);
  const std::string alphabet = "ab =():.#*-`\n\tSpecific Suggestions:";
  for (int trial = 0; trial < 2000; ++trial) {
    std::string raw;
    const auto len = rng() % 200;
    for (std::size_t i = 0; i < len; ++i) raw += alphabet[rng() % alphabet.size()];
    const int cap = static_cast<int>(rng() % 6);
    Feedback fb;
    CHECK_NOTHROW(fb = parse_feedback(raw, cap));
    CHECK(fb.raw == raw);
    CHECK(fb.suggestions.size() <= static_cast<std::size_t>(cap));
    for (const auto& s : fb.suggestions) {
      CHECK_FALSE(s.empty());
      CHECK(s == normalize(s));
    }
  }
}

TEST_CASE("reflect sends a reflector request") {
  Gateway gw(std::make_shared<ScriptedBackend>(std::vector<ScriptedBackend::Entry>{
      {RoleTag::reflector, "", std::string(kWellFormed)}, {RoleTag::reflector, "", ""}}));
  CHECK(reflect(gw, "prompt", {}) == kWellFormed);
  CHECK(reflect(gw, "prompt", {}).empty());
}
