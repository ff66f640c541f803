#include "refloop/corpus_index.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <sstream>

#include <fmt/format.h>

#include "json.hpp"
#include "refloop/hash.hpp"

namespace refloop {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool is_token_char(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

char ascii_lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

std::string join_lines(std::span<const std::string> lines) {
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out += '\n';
    out += lines[i];
  }
  return out;
}

bool has_hidden_component(const fs::path& rel) {
  for (const auto& part : rel) {
    const auto s = part.string();
    if (s.size() > 1 && s[0] == '.' && s != "..") return true;
  }
  return false;
}

}  // namespace

TokenSet::TokenSet(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  std::sort(tokens_.begin(), tokens_.end());
  tokens_.erase(std::unique(tokens_.begin(), tokens_.end()), tokens_.end());
}

bool TokenSet::contains(std::string_view token) const {
  return std::binary_search(tokens_.begin(), tokens_.end(), token,
                            [](std::string_view a, std::string_view b) { return a < b; });
}

TokenSet tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_token_char(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::string tok;
    while (i < text.size() && is_token_char(static_cast<unsigned char>(text[i]))) {
      tok += ascii_lower(text[i]);
      ++i;
    }
    tokens.push_back(std::move(tok));
  }
  return TokenSet(std::move(tokens));
}

std::vector<std::string> split_lines(std::string_view content) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < content.size()) {
    auto nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    std::string_view line = content.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.emplace_back(line);
    pos = nl + 1;
  }
  return lines;
}

bool is_valid_utf8(std::string_view bytes) {
  std::size_t i = 0;
  while (i < bytes.size()) {
    const auto c = static_cast<unsigned char>(bytes[i]);
    if (c == 0) return false;
    std::size_t extra = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= bytes.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(bytes[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Overlong forms, surrogates and out-of-range code points.
    if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) || (extra == 3 && cp < 0x10000) ||
        cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
      return false;
    }
    i += extra + 1;
  }
  return true;
}

IngestResult ingest_repo(const fs::path& root, const std::optional<LeakageCut>& cut,
                         const IngestFilters& filters) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) {
    throw IngestError(fmt::format("repository root '{}' is not a readable directory", root.string()));
  }

  IngestResult result;
  fs::recursive_directory_iterator it(root, fs::directory_options::skip_permission_denied, ec);
  if (ec) {
    throw IngestError(fmt::format("cannot read repository root '{}': {}", root.string(), ec.message()));
  }
  for (; it != fs::recursive_directory_iterator(); it.increment(ec)) {
    if (ec) {
      throw IngestError(fmt::format("error walking '{}': {}", root.string(), ec.message()));
    }
    const fs::path rel = fs::relative(it->path(), root);
    if (filters.skip_hidden && has_hidden_component(rel)) {
      if (it->is_directory()) it.disable_recursion_pending();
      continue;
    }
    if (!it->is_regular_file()) continue;
    const auto ext = it->path().extension().string();
    if (std::find(filters.extensions.begin(), filters.extensions.end(), ext) == filters.extensions.end()) {
      continue;
    }

    const std::string rel_path = rel.generic_string();
    std::ifstream in(it->path(), std::ios::binary);
    if (!in) {
      result.warnings.push_back({rel_path, "unreadable"});
      continue;
    }
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (!is_valid_utf8(content)) {
      result.warnings.push_back({rel_path, "not valid UTF-8 text"});
      continue;
    }
    result.files.push_back({rel_path, split_lines(content)});
  }

  std::sort(result.files.begin(), result.files.end(),
            [](const SourceFile& a, const SourceFile& b) { return a.path < b.path; });
  std::sort(result.warnings.begin(), result.warnings.end(),
            [](const IngestWarning& a, const IngestWarning& b) { return a.path < b.path; });
  if (cut) apply_leakage_cut(result.files, *cut);
  return result;
}

void apply_leakage_cut(std::vector<SourceFile>& files, const LeakageCut& cut) {
  for (auto& f : files) {
    if (f.path != cut.file_path) continue;
    const auto keep = static_cast<std::size_t>(std::max(cut.line_no - 1, 0));
    if (f.lines.size() > keep) f.lines.resize(keep);
  }
}

void IndexParams::validate() const {
  if (window_size < 1) {
    throw std::invalid_argument(fmt::format("window_size must be >= 1 (got {})", window_size));
  }
  if (stride < 1 || stride > window_size) {
    throw std::invalid_argument(
        fmt::format("stride must be in [1, window_size={}] (got {})", window_size, stride));
  }
}

std::vector<Chunk> chunk_file(const SourceFile& file, int window_size, int stride) {
  IndexParams{window_size, stride}.validate();
  std::vector<Chunk> chunks;
  const int total = static_cast<int>(file.lines.size());
  for (int start = 1; start <= total; start += stride) {
    const int end = std::min(start + window_size - 1, total);
    Chunk c;
    c.file_path = file.path;
    c.start_line = start;
    c.end_line = end;
    c.text = join_lines(std::span(file.lines).subspan(start - 1, end - start + 1));
    c.token_set = tokenize(c.text);
    chunks.push_back(std::move(c));
  }
  return chunks;
}

CorpusIndex::CorpusIndex(IndexParams params, std::vector<Chunk> chunks, std::string fingerprint)
    : params_(params), chunks_(std::move(chunks)), fingerprint_(std::move(fingerprint)) {}

std::string fingerprint_files(std::span<const SourceFile> files) {
  std::vector<const SourceFile*> sorted;
  sorted.reserve(files.size());
  for (const auto& f : files) sorted.push_back(&f);
  std::sort(sorted.begin(), sorted.end(),
            [](const SourceFile* a, const SourceFile* b) { return a->path < b->path; });
  std::string buf;
  for (const auto* f : sorted) {
    buf += f->path;
    buf += '\0';
    buf += std::to_string(f->lines.size());
    buf += '\0';
    buf += join_lines(f->lines);
    buf += '\0';
  }
  return sha256_hex(buf);
}

CorpusIndex build_index(std::span<const SourceFile> files, const IndexParams& params) {
  params.validate();
  std::vector<const SourceFile*> sorted;
  for (const auto& f : files) sorted.push_back(&f);
  std::sort(sorted.begin(), sorted.end(),
            [](const SourceFile* a, const SourceFile* b) { return a->path < b->path; });

  std::vector<Chunk> chunks;
  for (const auto* f : sorted) {
    auto fc = chunk_file(*f, params.window_size, params.stride);
    std::move(fc.begin(), fc.end(), std::back_inserter(chunks));
  }
  return CorpusIndex(params, std::move(chunks), fingerprint_files(files));
}

void CorpusIndex::write_jsonl(std::ostream& out) const {
  json header = {{"kind", "index"},
                 {"schema", "refloop.index/1"},
                 {"window_size", params_.window_size},
                 {"stride", params_.stride},
                 {"fingerprint", fingerprint_},
                 {"chunk_count", chunks_.size()}};
  out << header.dump() << '\n';
  for (const auto& c : chunks_) {
    json rec = {{"file_path", c.file_path},
                {"start_line", c.start_line},
                {"end_line", c.end_line},
                {"text", c.text},
                {"tokens", std::vector<std::string>(c.token_set.tokens().begin(), c.token_set.tokens().end())}};
    out << rec.dump() << '\n';
  }
}

CorpusIndex CorpusIndex::read_jsonl(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("index file is empty");
  const json header = json::parse(line);
  if (header.value("schema", "") != "refloop.index/1") {
    throw std::runtime_error("index file has an unknown schema");
  }
  IndexParams params{header.at("window_size").get<int>(), header.at("stride").get<int>()};
  params.validate();
  std::vector<Chunk> chunks;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json rec = json::parse(line);
    Chunk c;
    c.file_path = rec.at("file_path").get<std::string>();
    c.start_line = rec.at("start_line").get<int>();
    c.end_line = rec.at("end_line").get<int>();
    c.text = rec.at("text").get<std::string>();
    c.token_set = TokenSet(rec.at("tokens").get<std::vector<std::string>>());
    chunks.push_back(std::move(c));
  }
  if (chunks.size() != header.at("chunk_count").get<std::size_t>()) {
    throw std::runtime_error("index file is truncated");
  }
  return CorpusIndex(params, std::move(chunks), header.at("fingerprint").get<std::string>());
}

}  // namespace refloop
