#pragma once

#include <span>
#include <string>
#include <vector>

#include "refloop/corpus_index.hpp"

namespace refloop {

/// n-line retrieval query: x feedback suggestion lines stacked above the
/// last n - x lines of unfinished code.
struct RetrievalTarget {
  std::vector<std::string> lines;
  TokenSet token_set;
  int feedback_line_count = 0;

  friend bool operator==(const RetrievalTarget&, const RetrievalTarget&) = default;
};

struct RetrievedSnippet {
  Chunk chunk;
  double score = 0.0;
};

/// Last min(n, available) non-blank prefix lines, order preserved.
RetrievalTarget build_initial_target(std::span<const std::string> prefix_lines, int n);

/// First min(|suggestions|, x_cap) suggestion lines followed by the last n - x
/// non-blank prefix lines. With no suggestions this equals build_initial_target.
RetrievalTarget build_feedback_target(std::span<const std::string> suggestions,
                                      std::span<const std::string> prefix_lines, int n, int x_cap);

/// |a ∩ b| / |a ∪ b|, and 0 when both sets are empty.
double jaccard(const TokenSet& a, const TokenSet& b);

/// Top-k chunks by descending Jaccard score. Ties go to (file_path, start_line) ascending.
std::vector<RetrievedSnippet> retrieve(const CorpusIndex& index, const RetrievalTarget& target, int k);

}  // namespace refloop
