#include "lmfp/model_client.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "lmfp/errors.hpp"

namespace lmfp::client {

const char* to_string(Backend b) {
  switch (b) {
    case Backend::remote_endpoint: return "remote_endpoint";
    case Backend::stub: return "stub";
    case Backend::simulated: return "simulated";
  }
  return "stub";
}

Backend backend_from_string(const std::string& s) {
  if (s == "remote_endpoint") return Backend::remote_endpoint;
  if (s == "stub") return Backend::stub;
  if (s == "simulated") return Backend::simulated;
  throw Error(ErrorKind::validation, "backend: unknown value '" + s + "'");
}

void validate(const ModelHandle& h) {
  if (h.id.empty()) throw Error(ErrorKind::validation, "handle.id: must be non-empty");
  if (h.decode.temperature < 0) {
    throw Error(ErrorKind::validation, "handle.decode.temperature: must be >= 0");
  }
  if (h.decode.max_tokens < 1) {
    throw Error(ErrorKind::validation, "handle.decode.max_tokens: must be >= 1");
  }
  if (h.decode.top_logprobs < 0) {
    throw Error(ErrorKind::validation, "handle.decode.top_logprobs: must be >= 0");
  }
  if (h.backend == Backend::remote_endpoint && h.endpoint.base_url.empty()) {
    throw Error(ErrorKind::validation, "handle.endpoint.base_url: required for remote handles");
  }
}

std::string default_credential_env(const std::string& id) {
  std::string env = "MODEL_API_KEY_";
  for (char c : id) {
    env += std::isalnum(static_cast<unsigned char>(c))
               ? static_cast<char>(std::toupper(static_cast<unsigned char>(c)))
               : '_';
  }
  return env;
}

json handle_to_json(const ModelHandle& h) {
  json doc = make_envelope("model_handle");
  doc["id"] = h.id;
  doc["backend"] = to_string(h.backend);
  if (h.backend == Backend::remote_endpoint) {
    json ep;
    ep["base_url"] = h.endpoint.base_url;
    ep["model"] = h.endpoint.model;
    ep["credential_env"] = h.endpoint.credential_env;
    doc["endpoint"] = ep;
  }
  json dec;
  dec["temperature"] = h.decode.temperature;
  dec["max_tokens"] = h.decode.max_tokens;
  dec["top_logprobs"] = h.decode.top_logprobs;
  dec["request_logprobs"] = h.decode.request_logprobs;
  if (!h.decode.system_prompt.empty()) dec["system_prompt"] = h.decode.system_prompt;
  doc["decode"] = dec;
  doc["retry_budget"] = h.retry_budget;
  doc["timeout_ms"] = static_cast<std::int64_t>(h.timeout.count());
  if (!h.simulated.is_null()) doc["simulated"] = h.simulated;
  return doc;
}

ModelHandle handle_from_json(const json& j) {
  ModelHandle h;
  h.id = require_string(j, "id");
  h.backend = backend_from_string(require_string(j, "backend"));
  if (j.contains("endpoint")) {
    const json& ep = j["endpoint"];
    h.endpoint.base_url = require_string(ep, "base_url");
    if (ep.contains("model")) h.endpoint.model = ep["model"].get<std::string>();
    if (ep.contains("credential_env")) h.endpoint.credential_env = ep["credential_env"].get<std::string>();
  }
  if (j.contains("decode")) {
    const json& dec = j["decode"];
    if (dec.contains("temperature")) h.decode.temperature = dec["temperature"].get<double>();
    if (dec.contains("max_tokens")) h.decode.max_tokens = dec["max_tokens"].get<int>();
    if (dec.contains("top_logprobs")) h.decode.top_logprobs = dec["top_logprobs"].get<int>();
    if (dec.contains("request_logprobs")) h.decode.request_logprobs = dec["request_logprobs"].get<bool>();
    if (dec.contains("system_prompt")) h.decode.system_prompt = dec["system_prompt"].get<std::string>();
  }
  if (j.contains("retry_budget")) h.retry_budget = j["retry_budget"].get<int>();
  if (j.contains("timeout_ms")) h.timeout = std::chrono::milliseconds(j["timeout_ms"].get<std::int64_t>());
  if (j.contains("simulated")) h.simulated = j["simulated"];
  validate(h);
  return h;
}

ModelHandle handle_from_file(const std::string& path) {
  return handle_from_json(parse_document(read_file(path), "model_handle"));
}

void ModelClient::register_model(const std::string& id, CompletionFn fn) {
  std::lock_guard<std::mutex> lock(mutex_);
  registry_[id] = std::move(fn);
}

bool ModelClient::has_model(const std::string& id) const {
  std::lock_guard<std::mutex> lock(mutex_);
  return registry_.count(id) > 0;
}

ModelResponse ModelClient::complete(const ModelHandle& handle, const std::string& prompt) const {
  validate(handle);
  if (prompt.empty()) throw Error(ErrorKind::validation, "prompt: must be non-empty");
  return complete_once(handle, prompt);
}

ModelResponse ModelClient::complete_once(const ModelHandle& handle, const std::string& prompt) const {
  if (handle.backend == Backend::remote_endpoint) {
    return complete_remote(handle, prompt);
  }
  CompletionFn fn;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = registry_.find(handle.id);
    if (it == registry_.end()) {
      throw Error(ErrorKind::validation,
                  "handle '" + handle.id + "': no " + std::string(to_string(handle.backend)) +
                      " model registered under this id");
    }
    fn = it->second;
  }
  ModelResponse response = fn(prompt);
  // Logprobs are delivered only when the handle asks for them, whatever the
  // backend produced.
  if (!handle.decode.request_logprobs) response.token_logprobs.reset();
  lmfp::validate(response);
  return response;
}

namespace {

// Pulls text, truncation, and per-token candidates out of a chat-completions
// response body. Positive log-probabilities (rounding artifacts some servers
// emit) are clamped to zero.
ModelResponse parse_chat_response(const json& body, bool want_logprobs) {
  if (!body.contains("choices") || !body["choices"].is_array() || body["choices"].empty()) {
    throw Error(ErrorKind::protocol, "remote response has no choices");
  }
  const json& choice = body["choices"][0];
  if (!choice.contains("message") || !choice["message"].contains("content") ||
      !choice["message"]["content"].is_string()) {
    throw Error(ErrorKind::protocol, "remote response missing message text");
  }
  ModelResponse out;
  out.text = choice["message"]["content"].get<std::string>();
  out.truncated = choice.value("finish_reason", "") == "length";

  const bool has_logprobs = choice.contains("logprobs") && choice["logprobs"].is_object() &&
                            choice["logprobs"].contains("content") &&
                            choice["logprobs"]["content"].is_array();
  if (has_logprobs) {
    std::vector<TokenCandidates> tokens;
    for (const auto& tok : choice["logprobs"]["content"]) {
      TokenCandidates tc;
      if (tok.contains("top_logprobs") && tok["top_logprobs"].is_array() &&
          !tok["top_logprobs"].empty()) {
        for (const auto& cand : tok["top_logprobs"]) {
          tc.candidates.emplace_back(cand.value("token", ""),
                                     std::min(0.0, cand.value("logprob", 0.0)));
        }
      } else if (tok.contains("logprob")) {
        tc.candidates.emplace_back(tok.value("token", ""), std::min(0.0, tok["logprob"].get<double>()));
      }
      if (!tc.candidates.empty()) tokens.push_back(std::move(tc));
    }
    if (!tokens.empty()) out.token_logprobs = std::move(tokens);
  }
  if (want_logprobs && !out.token_logprobs) {
    out.warnings.push_back("token logprobs requested but unavailable; text-only response");
  }
  return out;
}

}  // namespace

ModelResponse ModelClient::complete_remote(const ModelHandle& handle, const std::string& prompt) const {
  json request;
  request["model"] = handle.endpoint.model;
  json messages = json::array();
  if (!handle.decode.system_prompt.empty()) {
    messages.push_back({{"role", "system"}, {"content", handle.decode.system_prompt}});
  }
  messages.push_back({{"role", "user"}, {"content", prompt}});
  request["messages"] = messages;
  request["temperature"] = handle.decode.temperature;
  request["max_tokens"] = handle.decode.max_tokens;
  if (handle.decode.request_logprobs) {
    request["logprobs"] = true;
    request["top_logprobs"] = handle.decode.top_logprobs;
  }
  const std::string body = request.dump();

  std::string credential;
  const std::string env_name = handle.endpoint.credential_env.empty()
                                   ? default_credential_env(handle.id)
                                   : handle.endpoint.credential_env;
  if (const char* value = std::getenv(env_name.c_str())) credential = value;

  const int attempts = std::max(0, handle.retry_budget) + 1;
  std::string last_error;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(retry_backoff_ * (1 << (attempt - 1)));
    }
    httplib::Client http(handle.endpoint.base_url);
    const auto timeout_s = std::chrono::duration_cast<std::chrono::seconds>(handle.timeout);
    const auto timeout_us =
        std::chrono::duration_cast<std::chrono::microseconds>(handle.timeout - timeout_s);
    http.set_connection_timeout(timeout_s.count(), timeout_us.count());
    http.set_read_timeout(timeout_s.count(), timeout_us.count());
    httplib::Headers headers;
    if (!credential.empty()) headers.emplace("Authorization", "Bearer " + credential);

    auto result = http.Post("/v1/chat/completions", headers, body, "application/json");
    if (!result) {
      last_error = "connection to " + handle.endpoint.base_url + " failed (" +
                   httplib::to_string(result.error()) + ")";
      continue;
    }
    if (result->status >= 500) {
      last_error = "server returned status " + std::to_string(result->status);
      continue;
    }
    if (result->status != 200) {
      throw Error(ErrorKind::protocol, "handle '" + handle.id + "': remote returned status " +
                                           std::to_string(result->status));
    }
    json parsed;
    try {
      parsed = json::parse(result->body);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::protocol, "handle '" + handle.id + "': unparseable response body: " + e.what());
    }
    ModelResponse response = parse_chat_response(parsed, handle.decode.request_logprobs);
    lmfp::validate(response);
    return response;
  }
  throw Error(ErrorKind::transport, "handle '" + handle.id + "': " + last_error + " after " +
                                        std::to_string(attempts) + " attempts");
}

std::vector<BatchItem> ModelClient::batch_complete(const ModelHandle& handle,
                                                   const QueryPlan& plan) const {
  validate(handle);
  if (plan.prompts.empty()) throw Error(ErrorKind::validation, "plan.prompts: must be non-empty");
  if (plan.max_parallel < 1) throw Error(ErrorKind::validation, "plan.max_parallel: must be >= 1");

  ModelHandle effective = handle;
  effective.retry_budget = plan.retry_budget;
  effective.timeout = plan.timeout;

  const std::size_t n = plan.prompts.size();
  std::vector<BatchItem> results(n);
  std::atomic<std::size_t> next{0};

  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        results[i].response = complete(effective, plan.prompts[i]);
      } catch (const Error& e) {
        results[i].error = e.what();
        results[i].error_kind = e.kind();
      } catch (const std::exception& e) {
        results[i].error = e.what();
        results[i].error_kind = ErrorKind::transport;
      }
    }
  };

  const std::size_t threads_wanted = std::min<std::size_t>(static_cast<std::size_t>(plan.max_parallel), n);
  if (threads_wanted <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads_wanted);
    for (std::size_t t = 0; t < threads_wanted; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  if (std::none_of(results.begin(), results.end(), [](const BatchItem& r) { return r.ok(); })) {
    std::string causes;
    for (std::size_t i = 0; i < n; ++i) {
      causes += "\n  [" + std::to_string(i) + "] " + results[i].error;
    }
    throw Error(results.front().error_kind, "all " + std::to_string(n) + " requests failed:" + causes);
  }
  return results;
}

}  // namespace lmfp::client
