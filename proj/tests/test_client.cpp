#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <chrono>
#include <thread>

#include <httplib.h>

#include "lmfp/errors.hpp"
#include "lmfp/model_client.hpp"

using namespace lmfp;
using namespace lmfp::client;

namespace {

ModelHandle stub_handle(const std::string& id) {
  ModelHandle h;
  h.id = id;
  h.backend = Backend::stub;
  return h;
}

}  // namespace

TEST_CASE("echo stub returns text without logprobs") {
  ModelClient mc;
  mc.register_model("echo", [](const std::string& prompt) {
    ModelResponse r;
    r.text = prompt;
    return r;
  });
  auto r = mc.complete(stub_handle("echo"), "ping");
  CHECK(r.text == "ping");
  CHECK_FALSE(r.token_logprobs.has_value());
  CHECK_FALSE(r.truncated);
}

TEST_CASE("stub completions are deterministic across calls") {
  ModelClient mc;
  mc.register_model("fixed", [](const std::string& prompt) {
    ModelResponse r;
    r.text = "resp:" + prompt;
    r.token_logprobs = std::vector<TokenCandidates>{{{{"resp", -0.1}, {"alt", -2.3}}}};
    return r;
  });
  auto a = mc.complete(stub_handle("fixed"), "p");
  auto b = mc.complete(stub_handle("fixed"), "p");
  CHECK(a == b);
}

TEST_CASE("handle validation") {
  ModelClient mc;
  ModelHandle h = stub_handle("x");
  h.decode.temperature = -0.5;
  CHECK_THROWS_AS(mc.complete(h, "p"), Error);
  h = stub_handle("x");
  h.decode.max_tokens = 0;
  CHECK_THROWS_AS(mc.complete(h, "p"), Error);
  h = stub_handle("");
  CHECK_THROWS_AS(mc.complete(h, "p"), Error);
}

TEST_CASE("empty prompt and unregistered ids are validation errors") {
  ModelClient mc;
  mc.register_model("m", [](const std::string&) { return ModelResponse{"ok", {}, false, {}}; });
  CHECK_THROWS_AS(mc.complete(stub_handle("m"), ""), Error);
  try {
    mc.complete(stub_handle("ghost"), "p");
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::validation);
  }
}

TEST_CASE("request_logprobs=false strips backend logprobs") {
  ModelClient mc;
  mc.register_model("m", [](const std::string&) {
    ModelResponse r;
    r.text = "t";
    r.token_logprobs = std::vector<TokenCandidates>{{{{"t", -0.2}}}};
    return r;
  });
  ModelHandle h = stub_handle("m");
  h.decode.request_logprobs = false;
  CHECK_FALSE(mc.complete(h, "p").token_logprobs.has_value());
  h.decode.request_logprobs = true;
  CHECK(mc.complete(h, "p").token_logprobs.has_value());
}

TEST_CASE("stub responses violating logprob hygiene are rejected") {
  ModelClient mc;
  mc.register_model("bad", [](const std::string&) {
    ModelResponse r;
    r.text = "t";
    r.token_logprobs = std::vector<TokenCandidates>{{{{"t", 0.5}}}};
    return r;
  });
  CHECK_THROWS_AS(mc.complete(stub_handle("bad"), "p"), Error);
}

TEST_CASE("batch preserves prompt order even with shuffled completion order") {
  ModelClient mc;
  const int n = 12;
  mc.register_model("sleepy", [n](const std::string& prompt) {
    const int idx = std::stoi(prompt);
    std::this_thread::sleep_for(std::chrono::milliseconds((n - idx) * 2));
    ModelResponse r;
    r.text = "out:" + prompt;
    return r;
  });
  QueryPlan plan;
  for (int i = 0; i < n; ++i) plan.prompts.push_back(std::to_string(i));
  plan.max_parallel = n;
  auto results = mc.batch_complete(stub_handle("sleepy"), plan);
  REQUIRE(results.size() == static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    REQUIRE(results[static_cast<std::size_t>(i)].ok());
    CHECK(results[static_cast<std::size_t>(i)].response->text == "out:" + std::to_string(i));
  }
}

TEST_CASE("max_parallel = 1 matches sequential completion") {
  ModelClient mc;
  mc.register_model("m", [](const std::string& prompt) {
    ModelResponse r;
    r.text = "v:" + prompt;
    return r;
  });
  QueryPlan plan;
  plan.prompts = {"a", "b", "c"};
  plan.max_parallel = 1;
  auto batch = mc.batch_complete(stub_handle("m"), plan);
  for (std::size_t i = 0; i < plan.prompts.size(); ++i) {
    CHECK(batch[i].response == mc.complete(stub_handle("m"), plan.prompts[i]));
  }
}

TEST_CASE("partial failures keep successful indices") {
  ModelClient mc;
  mc.register_model("flaky", [](const std::string& prompt) {
    if (prompt == "boom") throw Error(ErrorKind::transport, "synthetic failure");
    ModelResponse r;
    r.text = prompt;
    return r;
  });
  QueryPlan plan;
  plan.prompts = {"a", "boom", "c"};
  auto results = mc.batch_complete(stub_handle("flaky"), plan);
  CHECK(results[0].ok());
  CHECK_FALSE(results[1].ok());
  CHECK(results[1].error_kind == ErrorKind::transport);
  CHECK(results[2].ok());
}

TEST_CASE("all requests failing raises an aggregate error listing causes") {
  ModelClient mc;
  mc.register_model("dead", [](const std::string&) -> ModelResponse {
    throw Error(ErrorKind::transport, "down");
  });
  QueryPlan plan;
  plan.prompts = {"a", "b"};
  try {
    mc.batch_complete(stub_handle("dead"), plan);
    FAIL("expected aggregate error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::transport);
    CHECK(std::string(e.what()).find("[0]") != std::string::npos);
    CHECK(std::string(e.what()).find("[1]") != std::string::npos);
  }
}

TEST_CASE("unreachable remote fails with a transport error after retries") {
  ModelClient mc;
  mc.set_retry_backoff(std::chrono::milliseconds(1));
  ModelHandle h;
  h.id = "remote";
  h.backend = Backend::remote_endpoint;
  h.endpoint.base_url = "http://127.0.0.1:9";
  h.retry_budget = 2;
  h.timeout = std::chrono::milliseconds(300);
  try {
    mc.complete(h, "p");
    FAIL("expected transport error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::transport);
    CHECK(std::string(e.what()).find("3 attempts") != std::string::npos);
  }
}

namespace {

struct TestServer {
  httplib::Server server;
  int port = 0;
  std::thread thread;
  json last_request;
  std::string last_auth;

  explicit TestServer(json canned) {
    server.Post("/v1/chat/completions", [this, canned = std::move(canned)](const httplib::Request& req,
                                                                           httplib::Response& res) {
      last_request = json::parse(req.body);
      if (req.has_header("Authorization")) last_auth = req.get_header_value("Authorization");
      res.set_content(canned.dump(), "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~TestServer() {
    server.stop();
    thread.join();
  }
};

ModelHandle remote_handle(int port) {
  ModelHandle h;
  h.id = "api-model";
  h.backend = Backend::remote_endpoint;
  h.endpoint.base_url = "http://127.0.0.1:" + std::to_string(port);
  h.endpoint.model = "wire-name";
  h.retry_budget = 0;
  h.timeout = std::chrono::milliseconds(2000);
  return h;
}

}  // namespace

TEST_CASE("remote chat wire format: request fields and response parsing") {
  json canned;
  canned["choices"] = json::array();
  json choice;
  choice["message"] = {{"role", "assistant"}, {"content", "hello there"}};
  choice["finish_reason"] = "length";
  json lp;
  lp["content"] = json::array();
  json tok;
  tok["token"] = "hello";
  tok["logprob"] = -0.01;
  tok["top_logprobs"] = json::array({{{"token", "hello"}, {"logprob", 1e-9}},
                                     {{"token", "hi"}, {"logprob", -3.2}}});
  lp["content"].push_back(tok);
  choice["logprobs"] = lp;
  canned["choices"].push_back(choice);

  TestServer server(canned);
  ModelClient mc;
  auto h = remote_handle(server.port);
  h.decode.system_prompt = "be terse";
  setenv("MODEL_API_KEY_API_MODEL", "sk-test-123", 1);
  auto r = mc.complete(h, "question?");
  unsetenv("MODEL_API_KEY_API_MODEL");

  CHECK(r.text == "hello there");
  CHECK(r.truncated);
  REQUIRE(r.token_logprobs.has_value());
  REQUIRE(r.token_logprobs->size() == 1);
  const auto& cands = (*r.token_logprobs)[0].candidates;
  REQUIRE(cands.size() == 2);
  CHECK(cands[0].second == 0.0);  // tiny positive logprob clamped
  CHECK(cands[1].second == doctest::Approx(-3.2));

  CHECK(server.last_request["model"] == "wire-name");
  CHECK(server.last_request["temperature"] == 0.0);
  CHECK(server.last_request["max_tokens"] == 512);
  CHECK(server.last_request["logprobs"] == true);
  CHECK(server.last_request["top_logprobs"] == 20);
  REQUIRE(server.last_request["messages"].size() == 2);
  CHECK(server.last_request["messages"][0]["role"] == "system");
  CHECK(server.last_request["messages"][1]["content"] == "question?");
  CHECK(server.last_auth == "Bearer sk-test-123");
}

TEST_CASE("remote response without logprobs yields a warning, not an error") {
  json canned;
  canned["choices"] = json::array({{{"message", {{"content", "plain"}}}, {"finish_reason", "stop"}}});
  TestServer server(canned);
  ModelClient mc;
  auto r = mc.complete(remote_handle(server.port), "q");
  CHECK(r.text == "plain");
  CHECK_FALSE(r.token_logprobs.has_value());
  REQUIRE(r.warnings.size() == 1);
  CHECK(r.warnings[0].find("logprobs") != std::string::npos);
}

TEST_CASE("remote response missing text is a protocol error") {
  json canned;
  canned["choices"] = json::array({{{"finish_reason", "stop"}}});
  TestServer server(canned);
  ModelClient mc;
  try {
    mc.complete(remote_handle(server.port), "q");
    FAIL("expected protocol error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::protocol);
  }
}

TEST_CASE("default credential env name derives from the handle id") {
  CHECK(default_credential_env("my-model.v2") == "MODEL_API_KEY_MY_MODEL_V2");
}

TEST_CASE("handle files round trip") {
  ModelHandle h;
  h.id = "remote-1";
  h.backend = Backend::remote_endpoint;
  h.endpoint = {"http://example.test:8000", "m-small", "MODEL_API_KEY_CUSTOM"};
  h.decode.temperature = 0.5;
  h.decode.system_prompt = "sys";
  h.retry_budget = 5;
  h.timeout = std::chrono::milliseconds(1234);
  auto j = handle_to_json(h);
  auto restored = handle_from_json(j);
  CHECK(restored.id == h.id);
  CHECK(restored.backend == h.backend);
  CHECK(restored.endpoint.base_url == h.endpoint.base_url);
  CHECK(restored.endpoint.credential_env == h.endpoint.credential_env);
  CHECK(restored.decode.temperature == h.decode.temperature);
  CHECK(restored.decode.system_prompt == h.decode.system_prompt);
  CHECK(restored.retry_budget == 5);
  CHECK(restored.timeout.count() == 1234);
}
