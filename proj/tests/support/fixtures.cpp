#include "support/fixtures.hpp"

#include <atomic>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <unistd.h>

#include <fmt/format.h>

namespace refloop::testing {
namespace fs = std::filesystem;

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  std::random_device rd;
  path_ = fs::temp_directory_path() /
          fmt::format("refloop-test-{}-{}-{:08x}", ::getpid(), counter.fetch_add(1), rd());
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

void write_file(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void make_python_repo(const fs::path& root, const std::string& tag, int files, int code_lines) {
  for (int f = 0; f < files; ++f) {
    std::string text;
    text += fmt::format("\"\"\"Module {} of {}.\n\nGenerated fixture.\n\"\"\"\n", f, tag);
    text += "import os\n\n";
    for (int i = 0; i < code_lines; ++i) {
      if (i % 10 == 0) {
        text += fmt::format("\ndef {}_func_{}_{}(arg):\n", tag, f, i);
        text += "    '''Helper docstring.'''\n";
        text += fmt::format("    # comment {} {}\n", f, i);
        ++i;
        if (i >= code_lines) break;
      }
      text += fmt::format("    {}_value_{}_{} = arg * {} + {}\n", tag, f, i, i, f);
    }
    write_file(root / fmt::format("pkg/mod_{}.py", f), text);
  }
  write_file(root / "README.md", "# fixture\n");
}

std::string lines_text(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

}  // namespace refloop::testing
