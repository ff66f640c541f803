#include "refloop/llm_gateway.hpp"

#include <fstream>

#include <fmt/format.h>

#include "json.hpp"

namespace refloop {

std::string_view to_string(RoleTag role) { return role == RoleTag::actor ? "actor" : "reflector"; }

RoleTag role_from_string(std::string_view s) {
  if (s == "actor") return RoleTag::actor;
  if (s == "reflector") return RoleTag::reflector;
  throw ConfigError(fmt::format("unknown role '{}'", s));
}

std::string_view to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::http_chat: return "http";
    case BackendKind::scripted: return "scripted";
    case BackendKind::oracle: return "oracle";
  }
  return "?";
}

BackendKind backend_kind_from_string(std::string_view s) {
  if (s == "http" || s == "http_chat") return BackendKind::http_chat;
  if (s == "scripted") return BackendKind::scripted;
  if (s == "oracle") return BackendKind::oracle;
  throw ConfigError(fmt::format("unknown backend kind '{}'", s));
}

void BackendConfig::validate() const {
  switch (kind) {
    case BackendKind::http_chat:
      if (endpoint_url.empty()) throw ConfigError("http backend requires an endpoint URL");
      if (model_name.empty()) throw ConfigError("http backend requires a model name");
      if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
      if (timeout.count() <= 0) throw ConfigError("timeout must be positive");
      break;
    case BackendKind::scripted:
      if (script_path.empty()) throw ConfigError("scripted backend requires a script file");
      break;
    case BackendKind::oracle:
      if (oracle_sentinel.empty()) throw ConfigError("oracle backend requires a sentinel");
      break;
  }
}

ScriptedBackend::ScriptedBackend(std::vector<Entry> entries) : queue_(entries.begin(), entries.end()) {}

std::vector<ScriptedBackend::Entry> ScriptedBackend::load_script(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open script '{}'", path.string()));
  std::vector<Entry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto obj = nlohmann::json::parse(line);
      Entry e;
      if (obj.contains("role") && !obj["role"].is_null()) e.role = role_from_string(obj["role"].get<std::string>());
      e.match = obj.value("match", "");
      e.text = obj.at("text").get<std::string>();
      entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw ConfigError(fmt::format("{}:{}: bad script entry: {}", path.string(), lineno, ex.what()));
    }
  }
  return entries;
}

GenResponse ScriptedBackend::generate(const GenRequest& req) {
  std::lock_guard lock(mu_);
  for (auto it = queue_.begin(); it != queue_.end(); ++it) {
    if (it->role && *it->role != req.role) continue;
    if (!it->match.empty() && req.prompt.find(it->match) == std::string::npos) continue;
    GenResponse resp;
    resp.text = std::move(it->text);
    resp.backend_id = id();
    queue_.erase(it);
    return resp;
  }
  throw ScriptExhausted(fmt::format("no scripted {} response matches the prompt ({} entries left)",
                                    to_string(req.role), queue_.size()));
}

std::size_t ScriptedBackend::remaining() const {
  std::lock_guard lock(mu_);
  return queue_.size();
}

OracleBackend::OracleBackend(std::string sentinel, std::string miss_line)
    : sentinel_(std::move(sentinel)), miss_line_(std::move(miss_line)) {}

GenResponse OracleBackend::generate(const GenRequest& req) {
  GenResponse resp;
  resp.backend_id = id();
  if (req.role == RoleTag::reflector) return resp;
  if (req.ground_truth && req.prompt.find(sentinel_) != std::string::npos) {
    resp.text = *req.ground_truth;
  } else {
    resp.text = miss_line_;
  }
  return resp;
}

std::shared_ptr<Backend> make_backend(const BackendConfig& config) {
  config.validate();
  switch (config.kind) {
    case BackendKind::http_chat:
      return std::make_shared<HttpChatBackend>(config);
    case BackendKind::scripted:
      return std::make_shared<ScriptedBackend>(ScriptedBackend::load_script(config.script_path));
    case BackendKind::oracle:
      return std::make_shared<OracleBackend>(config.oracle_sentinel, config.oracle_miss_line);
  }
  throw ConfigError("unknown backend kind");
}

Gateway::Gateway(std::shared_ptr<Backend> backend, int max_concurrent)
    : backend_(std::move(backend)), max_concurrent_(std::max(max_concurrent, 1)) {
  if (!backend_) throw ConfigError("gateway requires a backend");
}

GenResponse Gateway::generate(const GenRequest& req) {
  {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return in_flight_ < max_concurrent_; });
    ++in_flight_;
    ++calls_;
  }
  struct Release {
    Gateway* g;
    ~Release() {
      {
        std::lock_guard lock(g->mu_);
        --g->in_flight_;
      }
      g->cv_.notify_one();
    }
  } release{this};

  const auto start = std::chrono::steady_clock::now();
  auto resp = backend_->generate(req);
  resp.latency = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
  return resp;
}

std::size_t Gateway::calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

GenResponse generate(const BackendConfig& config, const GenRequest& req) {
  Gateway gateway(make_backend(config), 1);
  return gateway.generate(req);
}

}  // namespace refloop
