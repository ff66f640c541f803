#include "refloop/retriever.hpp"

#include <algorithm>
#include <stdexcept>

#include <fmt/format.h>

#include "refloop/metrics.hpp"

namespace refloop {
namespace {

std::vector<std::string> last_nonblank(std::span<const std::string> lines, std::size_t count) {
  std::vector<std::string> picked;
  for (auto it = lines.rbegin(); it != lines.rend() && picked.size() < count; ++it) {
    if (!normalize(*it).empty()) picked.push_back(*it);
  }
  std::reverse(picked.begin(), picked.end());
  return picked;
}

RetrievalTarget make_target(std::vector<std::string> lines, int feedback_lines) {
  std::string joined;
  for (const auto& l : lines) {
    joined += l;
    joined += '\n';
  }
  RetrievalTarget t;
  t.token_set = tokenize(joined);
  t.lines = std::move(lines);
  t.feedback_line_count = feedback_lines;
  return t;
}

}  // namespace

RetrievalTarget build_initial_target(std::span<const std::string> prefix_lines, int n) {
  if (n < 1) throw std::invalid_argument(fmt::format("target length n must be >= 1 (got {})", n));
  return make_target(last_nonblank(prefix_lines, static_cast<std::size_t>(n)), 0);
}

RetrievalTarget build_feedback_target(std::span<const std::string> suggestions,
                                      std::span<const std::string> prefix_lines, int n, int x_cap) {
  if (n < 1) throw std::invalid_argument(fmt::format("target length n must be >= 1 (got {})", n));
  if (x_cap < 0 || x_cap > n) {
    throw std::invalid_argument(fmt::format("x_cap must be in [0, n={}] (got {})", n, x_cap));
  }
  const auto x = std::min(suggestions.size(), static_cast<std::size_t>(x_cap));
  std::vector<std::string> lines(suggestions.begin(), suggestions.begin() + static_cast<std::ptrdiff_t>(x));
  auto tail = last_nonblank(prefix_lines, static_cast<std::size_t>(n) - x);
  lines.insert(lines.end(), tail.begin(), tail.end());
  return make_target(std::move(lines), static_cast<int>(x));
}

double jaccard(const TokenSet& a, const TokenSet& b) {
  if (a.empty() && b.empty()) return 0.0;
  const auto ta = a.tokens();
  const auto tb = b.tokens();
  std::size_t inter = 0;
  auto ia = ta.begin();
  auto ib = tb.begin();
  while (ia != ta.end() && ib != tb.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++inter;
      ++ia;
      ++ib;
    }
  }
  const std::size_t uni = ta.size() + tb.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<RetrievedSnippet> retrieve(const CorpusIndex& index, const RetrievalTarget& target, int k) {
  if (k < 1) throw std::invalid_argument(fmt::format("k must be >= 1 (got {})", k));
  const auto& chunks = index.chunks();

  struct Scored {
    double score;
    std::size_t pos;
  };
  std::vector<Scored> scored;
  scored.reserve(chunks.size());
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    scored.push_back({jaccard(target.token_set, chunks[i].token_set), i});
  }
  auto before = [&](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    const auto& ca = chunks[a.pos];
    const auto& cb = chunks[b.pos];
    if (ca.file_path != cb.file_path) return ca.file_path < cb.file_path;
    if (ca.start_line != cb.start_line) return ca.start_line < cb.start_line;
    return a.pos < b.pos;
  };
  const auto take = std::min(scored.size(), static_cast<std::size_t>(k));
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), before);

  std::vector<RetrievedSnippet> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back({chunks[scored[i].pos], scored[i].score});
  return out;
}

}  // namespace refloop
