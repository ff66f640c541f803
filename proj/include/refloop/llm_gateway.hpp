#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace refloop {

enum class RoleTag { actor, reflector };

std::string_view to_string(RoleTag role);
RoleTag role_from_string(std::string_view s);

struct GenRequest {
  RoleTag role = RoleTag::actor;
  std::string prompt;
  int max_new_tokens = 128;
  double temperature = 0.0;
  std::vector<std::string> stop_sequences;
  // Hidden answer for the oracle backend. Never sent over the wire.
  std::optional<std::string> ground_truth;
};

struct TokenUsage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct GenResponse {
  std::string text;
  std::string backend_id;
  std::chrono::milliseconds latency{0};
  std::optional<TokenUsage> usage;
};

enum class BackendKind { http_chat, scripted, oracle };

std::string_view to_string(BackendKind kind);
BackendKind backend_kind_from_string(std::string_view s);

struct BackendConfig {
  BackendKind kind = BackendKind::http_chat;
  std::string endpoint_url;
  std::string model_name;
  std::string api_key_env = "OPENAI_API_KEY";
  std::chrono::milliseconds timeout{60'000};
  int max_retries = 3;
  // Delay before retry i (1-based) is retry_backoff * 2^(i-1).
  std::chrono::milliseconds retry_backoff{1'000};
  std::filesystem::path script_path;  // scripted
  std::string oracle_sentinel = "ORACLE_SENTINEL";
  std::string oracle_miss_line = "raise NotImplementedError";
  bool trace = false;  // log request/response bodies to stderr, key redacted

  /// Throws ConfigError for missing endpoint/model on http_chat or a missing script path.
  void validate() const;
};

class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Transport failure or non-retryable HTTP error after the retry budget is spent.
class BackendUnavailable : public BackendError {
 public:
  BackendUnavailable(const std::string& what, int attempts)
      : BackendError(what), attempts_(attempts) {}
  [[nodiscard]] int attempts() const { return attempts_; }

 private:
  int attempts_;
};

/// A scripted backend ran out of matching responses. Always a test bug.
class ScriptExhausted : public BackendError {
 public:
  using BackendError::BackendError;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual GenResponse generate(const GenRequest& req) = 0;
  [[nodiscard]] virtual std::string id() const = 0;
};

/// Plays back canned responses. Each call consumes the first queued entry whose
/// role matches (or is unset) and whose `match` substring occurs in the prompt.
class ScriptedBackend : public Backend {
 public:
  struct Entry {
    std::optional<RoleTag> role;
    std::string match;  // empty matches any prompt
    std::string text;
  };

  explicit ScriptedBackend(std::vector<Entry> entries);

  /// One JSON object per line: {"role": "actor"|"reflector", "match": "...", "text": "..."}.
  static std::vector<Entry> load_script(const std::filesystem::path& path);

  GenResponse generate(const GenRequest& req) override;
  [[nodiscard]] std::string id() const override { return "scripted"; }
  [[nodiscard]] std::size_t remaining() const;

 private:
  mutable std::mutex mu_;
  std::deque<Entry> queue_;
};

/// Returns the request's ground truth iff the prompt contains the sentinel,
/// otherwise a fixed wrong line. Reflector requests get an empty reply.
class OracleBackend : public Backend {
 public:
  OracleBackend(std::string sentinel, std::string miss_line);
  GenResponse generate(const GenRequest& req) override;
  [[nodiscard]] std::string id() const override { return "oracle"; }

 private:
  std::string sentinel_;
  std::string miss_line_;
};

/// OpenAI-compatible chat-completions client with retry and exponential backoff.
class HttpChatBackend : public Backend {
 public:
  /// Reads the API key from the environment; throws ConfigError if it is missing.
  explicit HttpChatBackend(BackendConfig config);
  GenResponse generate(const GenRequest& req) override;
  [[nodiscard]] std::string id() const override;

  /// Test hook; defaults to std::this_thread::sleep_for.
  void set_sleeper(std::function<void(std::chrono::milliseconds)> sleeper) { sleep_ = std::move(sleeper); }

 private:
  BackendConfig config_;
  std::string api_key_;
  std::string scheme_host_port_;
  std::string path_;
  std::function<void(std::chrono::milliseconds)> sleep_;
};

std::shared_ptr<Backend> make_backend(const BackendConfig& config);

/// Shared front door to a backend with a global concurrent-request limit.
class Gateway {
 public:
  explicit Gateway(std::shared_ptr<Backend> backend, int max_concurrent = 4);

  GenResponse generate(const GenRequest& req);
  [[nodiscard]] std::size_t calls() const;
  [[nodiscard]] const Backend& backend() const { return *backend_; }

 private:
  std::shared_ptr<Backend> backend_;
  int max_concurrent_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  int in_flight_ = 0;
  std::size_t calls_ = 0;
};

GenResponse generate(const BackendConfig& config, const GenRequest& req);

}  // namespace refloop
