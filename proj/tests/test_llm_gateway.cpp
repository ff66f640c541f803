#include <atomic>
#include <cstdlib>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "refloop/llm_gateway.hpp"
#include "support/fixtures.hpp"

using namespace refloop;
using namespace std::chrono_literals;

namespace {

class FakeServer {
 public:
  explicit FakeServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server_.Post(".*", [this, handler](const httplib::Request& req, httplib::Response& res) {
      ++hits;
      last_body = req.body;
      last_auth = req.get_header_value("Authorization");
      handler(req, res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeServer() {
    server_.stop();
    thread_.join();
  }

  [[nodiscard]] std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }

  std::atomic<int> hits{0};
  std::string last_body;
  std::string last_auth;

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

BackendConfig http_config(const std::string& url, int retries) {
  BackendConfig c;
  c.kind = BackendKind::http_chat;
  c.endpoint_url = url;
  c.model_name = "test-model";
  c.api_key_env = "REFLOOP_TEST_KEY";
  c.max_retries = retries;
  c.retry_backoff = 1ms;
  c.timeout = 2000ms;
  return c;
}

std::string chat_reply(const std::string& content) {
  return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}},
                        {"usage", {{"prompt_tokens", 7}, {"completion_tokens", 2}}}}
      .dump();
}

GenRequest actor_request(std::string prompt) {
  GenRequest r;
  r.prompt = std::move(prompt);
  return r;
}

struct KeyEnv {
  KeyEnv() { setenv("REFLOOP_TEST_KEY", "sk-test-secret", 1); }
  ~KeyEnv() { unsetenv("REFLOOP_TEST_KEY"); }
};

}  // namespace

TEST_CASE("scripted backend plays back in order") {
  ScriptedBackend backend({{std::nullopt, "", "foo"}});
  const auto r = backend.generate(actor_request("anything"));
  CHECK(r.text == "foo");
  CHECK(backend.remaining() == 0);
  CHECK_THROWS_AS(backend.generate(actor_request("anything")), ScriptExhausted);
}

TEST_CASE("scripted backend matches on role and prompt substring") {
  ScriptedBackend backend({
      {RoleTag::reflector, "", "feedback"},
      {RoleTag::actor, "beta", "second"},
      {RoleTag::actor, "", "first"},
  });
  CHECK(backend.generate(actor_request("alpha")).text == "first");
  CHECK(backend.generate(actor_request("alpha beta")).text == "second");
  GenRequest refl = actor_request("x");
  refl.role = RoleTag::reflector;
  CHECK(backend.generate(refl).text == "feedback");
  CHECK(backend.remaining() == 0);
}

TEST_CASE("scripted backend is deterministic across identical runs") {
  auto run = [] {
    ScriptedBackend backend({{std::nullopt, "", "a"}, {std::nullopt, "q", "b"}, {std::nullopt, "", "c"}});
    std::vector<std::string> out;
    for (const auto* p : {"q", "z", "q"}) out.push_back(backend.generate(actor_request(p)).text);
    return out;
  };
  CHECK(run() == run());
  CHECK(run() == std::vector<std::string>{"a", "c", "b"});
}

TEST_CASE("scripts load from line-delimited json") {
  refloop::testing::TempDir dir;
  refloop::testing::write_file(dir / "s.jsonl",
                               "{\"role\":\"actor\",\"text\":\"x = 1\"}\n\n{\"role\":\"reflector\",\"match\":\"EM\",\"text\":\"ok\"}\n");
  const auto entries = ScriptedBackend::load_script(dir / "s.jsonl");
  REQUIRE(entries.size() == 2);
  CHECK(entries[0].role == RoleTag::actor);
  CHECK(entries[1].match == "EM");

  refloop::testing::write_file(dir / "bad.jsonl", "{\"role\":\"actor\"}\n");
  CHECK_THROWS_AS(ScriptedBackend::load_script(dir / "bad.jsonl"), ConfigError);
  CHECK_THROWS_AS(ScriptedBackend::load_script(dir / "missing.jsonl"), ConfigError);
}

TEST_CASE("oracle backend answers only when the sentinel is present") {
  OracleBackend backend("SENTINEL", "raise NotImplementedError");
  GenRequest r = actor_request("context SENTINEL here");
  r.ground_truth = "return 42";
  CHECK(backend.generate(r).text == "return 42");
  r.prompt = "no marker";
  CHECK(backend.generate(r).text == "raise NotImplementedError");
  r.role = RoleTag::reflector;
  r.prompt = "SENTINEL";
  CHECK(backend.generate(r).text.empty());
}

TEST_CASE("backend config validation") {
  BackendConfig c;
  c.kind = BackendKind::http_chat;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.endpoint_url = "http://localhost:1";
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.model_name = "m";
  CHECK_NOTHROW(c.validate());

  BackendConfig s;
  s.kind = BackendKind::scripted;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  CHECK(backend_kind_from_string("oracle") == BackendKind::oracle);
  CHECK_THROWS_AS(backend_kind_from_string("local"), ConfigError);
}

TEST_CASE("missing api key is a config error before any request") {
  FakeServer server([](const httplib::Request&, httplib::Response& res) { res.set_content(chat_reply("x"), "application/json"); });
  unsetenv("REFLOOP_TEST_KEY");
  CHECK_THROWS_AS(HttpChatBackend(http_config(server.url(), 0)), ConfigError);
  try {
    HttpChatBackend backend(http_config(server.url(), 0));
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("REFLOOP_TEST_KEY") != std::string::npos);
  }
  CHECK(server.hits == 0);
}

TEST_CASE("http backend parses a chat completion") {
  KeyEnv key;
  FakeServer server([](const httplib::Request&, httplib::Response& res) {
    res.set_content(chat_reply("return value"), "application/json");
  });
  HttpChatBackend backend(http_config(server.url(), 0));
  GenRequest r = actor_request("def f():");
  r.max_new_tokens = 16;
  r.ground_truth = "hidden answer";
  const auto resp = backend.generate(r);
  CHECK(resp.text == "return value");
  REQUIRE(resp.usage.has_value());
  CHECK(resp.usage->prompt_tokens == 7);
  CHECK(server.last_auth == "Bearer sk-test-secret");

  const auto sent = nlohmann::json::parse(server.last_body);
  CHECK(sent["model"] == "test-model");
  CHECK(sent["max_tokens"] == 16);
  CHECK(sent["messages"][0]["content"] == "def f():");
  CHECK(server.last_body.find("hidden answer") == std::string::npos);
}

TEST_CASE("http backend returns empty text for empty content") {
  KeyEnv key;
  FakeServer server([](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":null}}]})", "application/json");
  });
  HttpChatBackend backend(http_config(server.url(), 0));
  CHECK(backend.generate(actor_request("p")).text.empty());
}

TEST_CASE("http backend retries transient failures with exponential backoff") {
  KeyEnv key;
  FakeServer server([](const httplib::Request&, httplib::Response& res) { res.status = 503; });
  auto config = http_config(server.url(), 2);
  config.retry_backoff = 10ms;
  HttpChatBackend backend(config);
  std::vector<std::chrono::milliseconds> sleeps;
  backend.set_sleeper([&](std::chrono::milliseconds d) { sleeps.push_back(d); });
  try {
    backend.generate(actor_request("p"));
    FAIL("expected BackendUnavailable");
  } catch (const BackendUnavailable& e) {
    CHECK(e.attempts() == 3);
  }
  CHECK(server.hits == 3);
  CHECK(sleeps == std::vector<std::chrono::milliseconds>{10ms, 20ms});
}

TEST_CASE("http backend recovers after a transient failure") {
  KeyEnv key;
  std::atomic<int> n{0};
  FakeServer server([&](const httplib::Request&, httplib::Response& res) {
    if (n++ == 0) {
      res.status = 429;
      return;
    }
    res.set_content(chat_reply("ok"), "application/json");
  });
  HttpChatBackend backend(http_config(server.url(), 3));
  CHECK(backend.generate(actor_request("p")).text == "ok");
  CHECK(server.hits == 2);
}

TEST_CASE("http backend does not retry client errors") {
  KeyEnv key;
  FakeServer server([](const httplib::Request&, httplib::Response& res) { res.status = 400; });
  HttpChatBackend backend(http_config(server.url(), 3));
  CHECK_THROWS_AS(backend.generate(actor_request("p")), BackendUnavailable);
  CHECK(server.hits == 1);
}

TEST_CASE("unreachable endpoint gives BackendUnavailable after all attempts") {
  KeyEnv key;
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  HttpChatBackend backend(http_config("http://127.0.0.1:" + std::to_string(port), 2));
  int slept = 0;
  backend.set_sleeper([&](std::chrono::milliseconds) { ++slept; });
  try {
    backend.generate(actor_request("p"));
    FAIL("expected BackendUnavailable");
  } catch (const BackendUnavailable& e) {
    CHECK(e.attempts() == 3);
  }
  CHECK(slept == 2);
}

TEST_CASE("gateway limits concurrent calls") {
  class SlowBackend : public Backend {
   public:
    GenResponse generate(const GenRequest&) override {
      const int now = ++active;
      int seen = peak.load();
      while (now > seen && !peak.compare_exchange_weak(seen, now)) {
      }
      std::this_thread::sleep_for(5ms);
      --active;
      return {"x", "slow", {}, std::nullopt};
    }
    [[nodiscard]] std::string id() const override { return "slow"; }
    std::atomic<int> active{0};
    std::atomic<int> peak{0};
  };
  auto backend = std::make_shared<SlowBackend>();
  Gateway gateway(backend, 2);
  std::vector<std::jthread> threads;
  for (int i = 0; i < 8; ++i) threads.emplace_back([&] { gateway.generate(actor_request("p")); });
  threads.clear();
  CHECK(gateway.calls() == 8);
  CHECK(backend->peak <= 2);
}
