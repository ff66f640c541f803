#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace refloop {

struct EvalResult {
  int em = 0;
  double es = 0.0;
};

/// Strips leading and trailing whitespace. Inner characters are untouched.
std::string normalize(std::string_view line);

int exact_match(std::string_view pred, std::string_view truth);

/// Character-level (Unicode code point) edit distance between the normalized inputs.
std::size_t levenshtein(std::string_view a, std::string_view b);

/// 1 - lev / max(|pred|, |truth|) over normalized strings; 1.0 when both are empty.
double edit_similarity(std::string_view pred, std::string_view truth);

EvalResult evaluate(std::string_view pred, std::string_view truth);

}  // namespace refloop
