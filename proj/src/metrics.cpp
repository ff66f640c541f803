#include "refloop/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace refloop {
namespace {

constexpr std::string_view kWhitespace = " \t\n\r\f\v";

// Decodes UTF-8 into code points. Bytes that do not start a valid sequence
// map to distinct values in the low-surrogate range so they still compare.
std::u32string decode(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    char32_t cp = 0;
    if (c < 0x80) {
      out.push_back(c);
      ++i;
      continue;
    }
    if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    }
    bool ok = extra > 0;
    for (std::size_t k = 1; ok && k <= extra; ++k) {
      if (i + k >= s.size()) {
        ok = false;
        break;
      }
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) ok = false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    if (ok) {
      out.push_back(cp);
      i += extra + 1;
    } else {
      out.push_back(static_cast<char32_t>(0xDC00 + c));
      ++i;
    }
  }
  return out;
}

std::size_t distance(const std::u32string& a, const std::u32string& b) {
  const std::u32string& s = a.size() < b.size() ? b : a;
  const std::u32string& t = a.size() < b.size() ? a : b;
  std::vector<std::size_t> prev(t.size() + 1);
  std::vector<std::size_t> cur(t.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= s.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= t.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (s[i - 1] == t[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[t.size()];
}

}  // namespace

std::string normalize(std::string_view line) {
  const auto first = line.find_first_not_of(kWhitespace);
  if (first == std::string_view::npos) return {};
  const auto last = line.find_last_not_of(kWhitespace);
  return std::string(line.substr(first, last - first + 1));
}

int exact_match(std::string_view pred, std::string_view truth) {
  return normalize(pred) == normalize(truth) ? 1 : 0;
}

std::size_t levenshtein(std::string_view a, std::string_view b) {
  return distance(decode(normalize(a)), decode(normalize(b)));
}

double edit_similarity(std::string_view pred, std::string_view truth) {
  const auto p = decode(normalize(pred));
  const auto t = decode(normalize(truth));
  const auto longest = std::max(p.size(), t.size());
  if (longest == 0) return 1.0;
  return 1.0 - static_cast<double>(distance(p, t)) / static_cast<double>(longest);
}

EvalResult evaluate(std::string_view pred, std::string_view truth) {
  return {exact_match(pred, truth), edit_similarity(pred, truth)};
}

}  // namespace refloop
