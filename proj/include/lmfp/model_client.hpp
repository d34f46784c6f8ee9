#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "lmfp/errors.hpp"
#include "lmfp/serial.hpp"
#include "lmfp/types.hpp"

namespace lmfp::client {

enum class Backend { remote_endpoint, stub, simulated };

const char* to_string(Backend b);
Backend backend_from_string(const std::string& s);

struct EndpointConfig {
  std::string base_url;  // scheme://host[:port]; requests go to /v1/chat/completions
  std::string model;     // model name sent on the wire
  std::string credential_env;  // env var holding the bearer token (optional)
};

struct DecodeConfig {
  double temperature = 0.0;
  int max_tokens = 512;
  int top_logprobs = 20;
  bool request_logprobs = true;
  std::string system_prompt;  // prepended as a system message when non-empty
};

struct ModelHandle {
  std::string id;
  Backend backend = Backend::stub;
  EndpointConfig endpoint;
  DecodeConfig decode;
  int retry_budget = 3;
  std::chrono::milliseconds timeout{10000};
  json simulated;  // opaque config consumed by the simulation harness
};

void validate(const ModelHandle& h);
json handle_to_json(const ModelHandle& h);
ModelHandle handle_from_json(const json& j);
ModelHandle handle_from_file(const std::string& path);

// MODEL_API_KEY_<ID> with the id uppercased and non-alphanumerics mapped to _.
std::string default_credential_env(const std::string& id);

struct QueryPlan {
  std::vector<std::string> prompts;
  int max_parallel = 4;
  int retry_budget = 3;
  std::chrono::milliseconds timeout{10000};
};

// Per-index outcome of a batch; failures keep their slot so result order
// always matches prompt order.
struct BatchItem {
  std::optional<ModelResponse> response;
  std::string error;
  ErrorKind error_kind = ErrorKind::transport;

  bool ok() const { return response.has_value(); }
};

using CompletionFn = std::function<ModelResponse(const std::string& prompt)>;

// Uniform black-box access to models under test. Remote endpoints speak a
// chat-completions wire protocol; stub and simulated backends are resolved
// through an in-process registry keyed by handle id. Safe for concurrent use
// once registration is done.
class ModelClient {
 public:
  void register_model(const std::string& id, CompletionFn fn);
  bool has_model(const std::string& id) const;

  ModelResponse complete(const ModelHandle& handle, const std::string& prompt) const;
  std::vector<BatchItem> batch_complete(const ModelHandle& handle, const QueryPlan& plan) const;

  // Base delay for exponential backoff between remote retries.
  void set_retry_backoff(std::chrono::milliseconds base) { retry_backoff_ = base; }

 private:
  ModelResponse complete_once(const ModelHandle& handle, const std::string& prompt) const;
  ModelResponse complete_remote(const ModelHandle& handle, const std::string& prompt) const;

  mutable std::mutex mutex_;
  std::map<std::string, CompletionFn> registry_;
  std::chrono::milliseconds retry_backoff_{100};
};

}  // namespace lmfp::client
