#include <cstdlib>
#include <iostream>
#include <thread>

#include <fmt/format.h>

#include "httplib.h"
#include "json.hpp"
#include "refloop/llm_gateway.hpp"

namespace refloop {
namespace {

constexpr std::string_view kDefaultPath = "/v1/chat/completions";

bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace

HttpChatBackend::HttpChatBackend(BackendConfig config) : config_(std::move(config)) {
  config_.validate();
  if (!config_.api_key_env.empty()) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
      throw ConfigError(fmt::format("environment variable {} is not set", config_.api_key_env));
    }
    api_key_ = key;
  }

  const std::string& url = config_.endpoint_url;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError(fmt::format("endpoint URL '{}' has no scheme", url));
  }
  const auto path_start = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? std::string() : url.substr(path_start);
  if (path_.empty() || path_ == "/") path_ = kDefaultPath;

  sleep_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

std::string HttpChatBackend::id() const { return fmt::format("http:{}", config_.model_name); }

GenResponse HttpChatBackend::generate(const GenRequest& req) {
  nlohmann::json body = {
      {"model", config_.model_name},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", req.prompt}}})},
      {"max_tokens", req.max_new_tokens},
      {"temperature", req.temperature},
  };
  if (!req.stop_sequences.empty()) body["stop"] = req.stop_sequences;
  const std::string payload = body.dump();

  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);

  const int attempts = config_.max_retries + 1;
  std::string last_error;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    if (attempt > 1) sleep_(config_.retry_backoff * (1 << std::min(attempt - 2, 20)));

    httplib::Client client(scheme_host_port_);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    if (config_.trace) {
      std::clog << fmt::format("[trace] POST {}{} (Authorization: <redacted>) attempt {}/{}\n{}\n",
                               scheme_host_port_, path_, attempt, attempts, payload);
    }
    auto res = client.Post(path_, headers, payload, "application/json");
    if (!res) {
      last_error = fmt::format("request failed: {}", httplib::to_string(res.error()));
      continue;
    }
    if (config_.trace) std::clog << fmt::format("[trace] HTTP {}\n{}\n", res->status, res->body);
    if (retryable_status(res->status)) {
      last_error = fmt::format("HTTP {}", res->status);
      continue;
    }
    if (res->status != 200) {
      throw BackendUnavailable(fmt::format("{} returned HTTP {}: {}", id(), res->status, res->body), attempt);
    }

    GenResponse out;
    out.backend_id = id();
    try {
      const auto reply = nlohmann::json::parse(res->body);
      const auto& choices = reply.at("choices");
      if (!choices.empty()) {
        const auto& msg = choices.at(0).at("message");
        if (msg.contains("content") && msg["content"].is_string()) out.text = msg["content"].get<std::string>();
      }
      if (reply.contains("usage") && reply["usage"].is_object()) {
        const auto& u = reply["usage"];
        out.usage = TokenUsage{u.value("prompt_tokens", 0), u.value("completion_tokens", 0)};
      }
    } catch (const nlohmann::json::exception& ex) {
      throw BackendUnavailable(fmt::format("{} sent a malformed reply: {}", id(), ex.what()), attempt);
    }
    return out;
  }
  throw BackendUnavailable(
      fmt::format("{} unavailable after {} attempts: {}", id(), attempts, last_error), attempts);
}

}  // namespace refloop
