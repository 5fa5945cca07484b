#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "format_adapter/gateway.hpp"

namespace format_adapter::llm {

struct HttpResult {
  int status = 0;  // 0 when the request never produced an HTTP response
  std::string body;
  std::string error;
};

using HttpHeaders = std::vector<std::pair<std::string, std::string>>;

class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResult post_json(const std::string& path, const std::string& body,
                               const HttpHeaders& headers) = 0;
};

// cpp-httplib transport. `base_url` is scheme://host[:port]; any path
// component is prepended to request paths.
std::unique_ptr<HttpTransport> make_http_transport(const std::string& base_url,
                                                   std::chrono::seconds timeout);

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds base_delay{1000};
  double jitter = 0.2;  // delay multiplied by a uniform factor in [1-jitter, 1+jitter]
  std::function<void(std::chrono::milliseconds)> sleep;  // defaults to this_thread::sleep_for
};

// HTTP 429, any 5xx, and transport-level failures are retried; every other
// status fails immediately.
bool is_retryable_status(int status);

// Delay before retry number `retry_index` (0-based): base * 2^retry_index,
// scaled by `jitter_factor`.
std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int retry_index,
                                        double jitter_factor);

struct RemoteConfig {
  std::string base_url = "https://api.openai.com";
  std::string endpoint = "/v1/chat/completions";
  std::string api_key;
  std::chrono::seconds timeout{120};
  RetryPolicy retry;
};

// Reads the API key from the environment; empty when unset.
std::string api_key_from_env(const std::string& variable = "OPENAI_API_KEY");

json to_openai_request(const ChatRequest& request);

struct ParsedCompletion {
  std::string text;
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
};

// Throws a protocol error when the body is not a chat-completions response.
ParsedCompletion parse_openai_response(const std::string& body);

// OpenAI-compatible /v1/chat/completions client.
class RemoteBackend : public Backend {
 public:
  // Throws a configuration error when the API key is empty.
  explicit RemoteBackend(RemoteConfig config, std::unique_ptr<HttpTransport> transport = nullptr);

  ChatResponse send(const ChatRequest& request) override;
  BackendKind kind() const override { return BackendKind::remote; }

 private:
  RemoteConfig config_;
  std::unique_ptr<HttpTransport> transport_;
  std::mutex rng_mutex_;
  std::mt19937_64 jitter_rng_;
};

}  // namespace format_adapter::llm
