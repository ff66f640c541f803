#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace refloop {

/// Sorted, duplicate-free set of lowercase identifier tokens.
class TokenSet {
 public:
  TokenSet() = default;
  explicit TokenSet(std::vector<std::string> tokens);

  [[nodiscard]] std::span<const std::string> tokens() const { return tokens_; }
  [[nodiscard]] std::size_t size() const { return tokens_.size(); }
  [[nodiscard]] bool empty() const { return tokens_.empty(); }
  [[nodiscard]] bool contains(std::string_view token) const;

  friend bool operator==(const TokenSet&, const TokenSet&) = default;

 private:
  std::vector<std::string> tokens_;
};

/// Maximal runs of [A-Za-z0-9_], lowercased, with duplicates collapsed.
TokenSet tokenize(std::string_view text);

struct SourceFile {
  std::string path;  // repo-relative, '/' separated
  std::vector<std::string> lines;

  friend bool operator==(const SourceFile&, const SourceFile&) = default;
};

struct Chunk {
  std::string file_path;
  int start_line = 0;  // 1-based, inclusive
  int end_line = 0;    // 1-based, inclusive
  std::string text;
  TokenSet token_set;

  friend bool operator==(const Chunk&, const Chunk&) = default;
};

struct IndexParams {
  int window_size = 20;
  int stride = 10;

  /// Throws std::invalid_argument unless window_size >= 1 and 1 <= stride <= window_size.
  void validate() const;

  friend bool operator==(const IndexParams&, const IndexParams&) = default;
};

struct IngestFilters {
  std::vector<std::string> extensions{".py"};
  bool skip_hidden = true;  // dot-directories such as .git
};

/// Truncates the named file to the lines strictly before `line_no`.
struct LeakageCut {
  std::string file_path;
  int line_no = 1;
};

struct IngestWarning {
  std::string path;
  std::string reason;
};

struct IngestResult {
  std::vector<SourceFile> files;  // sorted by path
  std::vector<IngestWarning> warnings;
};

class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Splits file content into lines with the trailing "\n" (and "\r") removed.
std::vector<std::string> split_lines(std::string_view content);

bool is_valid_utf8(std::string_view bytes);

IngestResult ingest_repo(const std::filesystem::path& root,
                         const std::optional<LeakageCut>& cut,
                         const IngestFilters& filters = {});

/// Applies the cut in place to an already ingested file list.
void apply_leakage_cut(std::vector<SourceFile>& files, const LeakageCut& cut);

std::vector<Chunk> chunk_file(const SourceFile& file, int window_size, int stride);

/// Immutable searchable index. Chunks are ordered by (file_path, start_line).
class CorpusIndex {
 public:
  CorpusIndex() = default;
  CorpusIndex(IndexParams params, std::vector<Chunk> chunks, std::string fingerprint);

  [[nodiscard]] const std::vector<Chunk>& chunks() const { return chunks_; }
  [[nodiscard]] const IndexParams& params() const { return params_; }
  [[nodiscard]] const std::string& fingerprint() const { return fingerprint_; }
  [[nodiscard]] std::size_t size() const { return chunks_.size(); }

  /// Line-delimited JSON: one header record, then one record per chunk.
  void write_jsonl(std::ostream& out) const;
  static CorpusIndex read_jsonl(std::istream& in);

 private:
  IndexParams params_;
  std::vector<Chunk> chunks_;
  std::string fingerprint_;
};

/// SHA-256 (hex) over the paths and contents of `files`, independent of input order.
std::string fingerprint_files(std::span<const SourceFile> files);

CorpusIndex build_index(std::span<const SourceFile> files, const IndexParams& params);

}  // namespace refloop
