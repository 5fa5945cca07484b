#include "format_adapter/remote_backend.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdlib>
#include <thread>

#include "format_adapter/error.hpp"
#include "format_adapter/util.hpp"

namespace format_adapter::llm {
namespace {

class HttplibTransport : public HttpTransport {
 public:
  HttplibTransport(const std::string& base_url, std::chrono::seconds timeout) : timeout_(timeout) {
    const auto scheme_end = base_url.find("://");
    const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    const auto path_start = base_url.find('/', host_start);
    origin_ = base_url.substr(0, path_start);
    if (path_start != std::string::npos) {
      prefix_ = base_url.substr(path_start);
      while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    }
    if (!httplib::Client(origin_).is_valid()) {
      throw Error(ErrorCode::config, "invalid base URL '" + base_url + "'");
    }
  }

  // One client per call: httplib clients are not safe for concurrent use.
  HttpResult post_json(const std::string& path, const std::string& body,
                       const HttpHeaders& headers) override {
    httplib::Client client(origin_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    auto res = client.Post(prefix_ + path, h, body, "application/json");
    if (!res) return HttpResult{0, {}, httplib::to_string(res.error())};
    return HttpResult{res->status, res->body, {}};
  }

 private:
  std::chrono::seconds timeout_;
  std::string origin_;
  std::string prefix_;
};

}  // namespace

std::unique_ptr<HttpTransport> make_http_transport(const std::string& base_url,
                                                   std::chrono::seconds timeout) {
  return std::make_unique<HttplibTransport>(base_url, timeout);
}

bool is_retryable_status(int status) { return status == 0 || status == 429 || status >= 500; }

std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int retry_index,
                                        double jitter_factor) {
  const double ms = static_cast<double>(policy.base_delay.count()) *
                    std::pow(2.0, static_cast<double>(retry_index)) * jitter_factor;
  return std::chrono::milliseconds(static_cast<long long>(std::max(ms, 0.0)));
}

std::string api_key_from_env(const std::string& variable) {
  const char* value = std::getenv(variable.c_str());
  return value ? std::string(value) : std::string();
}

json to_openai_request(const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  }
  json body{{"model", request.model_id},
            {"messages", std::move(messages)},
            {"temperature", request.temperature},
            {"top_p", request.top_p},
            {"max_tokens", request.max_tokens}};
  if (request.seed) body["seed"] = *request.seed;
  return body;
}

ParsedCompletion parse_openai_response(const std::string& body) {
  try {
    const json j = json::parse(body);
    const auto& choices = j.at("choices");
    if (!choices.is_array() || choices.empty()) {
      throw Error(ErrorCode::protocol, "chat completion has no choices");
    }
    const auto& content = choices.at(0).at("message").at("content");
    ParsedCompletion out;
    out.text = content.is_null() ? std::string() : content.get<std::string>();
    if (j.contains("usage") && j["usage"].is_object()) {
      out.prompt_tokens = j["usage"].value("prompt_tokens", std::size_t{0});
      out.completion_tokens = j["usage"].value("completion_tokens", std::size_t{0});
    } else {
      out.completion_tokens = approximate_tokens(out.text);
    }
    return out;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::protocol, std::string("malformed chat completion: ") + e.what());
  }
}

RemoteBackend::RemoteBackend(RemoteConfig config, std::unique_ptr<HttpTransport> transport)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      jitter_rng_(std::random_device{}()) {
  if (config_.api_key.empty()) {
    throw Error(ErrorCode::config, "remote backend requires an API key");
  }
  if (config_.retry.max_attempts < 1) {
    throw Error(ErrorCode::config, "retry policy needs at least one attempt");
  }
  if (!transport_) transport_ = make_http_transport(config_.base_url, config_.timeout);
  if (!config_.retry.sleep) {
    config_.retry.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  }
}

ChatResponse RemoteBackend::send(const ChatRequest& request) {
  const std::string body = to_openai_request(request).dump();
  const HttpHeaders headers{{"Authorization", "Bearer " + config_.api_key}};

  HttpResult last;
  for (int attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
    last = transport_->post_json(config_.endpoint, body, headers);
    if (last.status >= 200 && last.status < 300) {
      const auto parsed = parse_openai_response(last.body);
      ChatResponse response;
      response.text = parsed.text;
      response.prompt_tokens = parsed.prompt_tokens;
      response.completion_tokens = parsed.completion_tokens;
      response.backend = BackendKind::remote;
      response.attempts = attempt;
      return response;
    }
    if (!is_retryable_status(last.status)) {
      throw TransportError("upstream returned HTTP " + std::to_string(last.status) + ": " +
                               last.body.substr(0, 200),
                           attempt, last.status);
    }
    if (attempt == config_.retry.max_attempts) break;

    double factor = 1.0;
    {
      std::lock_guard lock(rng_mutex_);
      factor = 1.0 + config_.retry.jitter * (2.0 * unit_uniform(jitter_rng_) - 1.0);
    }
    const auto delay = backoff_delay(config_.retry, attempt - 1, factor);
    spdlog::warn("chat completion attempt {} failed ({}); retrying in {} ms", attempt,
                 last.status == 0 ? last.error : "HTTP " + std::to_string(last.status),
                 delay.count());
    config_.retry.sleep(delay);
  }
  throw TransportError("chat completion failed after " +
                           std::to_string(config_.retry.max_attempts) + " attempts (" +
                           (last.status == 0 ? last.error : "HTTP " + std::to_string(last.status)) +
                           ")",
                       config_.retry.max_attempts, last.status);
}

}  // namespace format_adapter::llm
