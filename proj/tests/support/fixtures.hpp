#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace refloop::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(std::string_view rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

void write_file(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

/// Writes `files` Python modules under `root`. Each holds `code_lines` distinct
/// code lines (tagged with `tag`), plus comments, blank lines and docstrings.
void make_python_repo(const std::filesystem::path& root, const std::string& tag, int files, int code_lines);

/// Joins lines with '\n' and a trailing newline.
std::string lines_text(const std::vector<std::string>& lines);

}  // namespace refloop::testing
