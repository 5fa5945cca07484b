#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include "json.hpp"

namespace format_adapter::llm {

using json = nlohmann::json;

enum class Role { system, user, assistant };

struct ChatMessage {
  Role role = Role::user;
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct ChatRequest {
  std::string model_id;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  double top_p = 1.0;
  std::size_t max_tokens = 1024;
  std::optional<std::uint64_t> seed;

  // Throws validation errors: at least one message, the last one from the
  // user, temperature >= 0, top_p in (0,1].
  void validate() const;

  friend bool operator==(const ChatRequest&, const ChatRequest&) = default;
};

enum class BackendKind { remote, simulated, cache };

struct ChatResponse {
  std::string text;
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
  bool cached = false;
  BackendKind backend = BackendKind::simulated;
  int attempts = 1;  // upstream attempts spent on this response, retries included
};

// Pipeline stage a call is attributed to in usage reports.
enum class Stage { format_gen, rewrite, answer, score, select };

struct CallContext {
  std::string run_id;
  Stage stage = Stage::answer;
};

std::string_view to_string(Role role);
std::string_view to_string(BackendKind kind);
std::string_view to_string(Stage stage);
Role role_from_string(std::string_view s);
BackendKind backend_kind_from_string(std::string_view s);

void to_json(json& j, const ChatMessage& m);
void from_json(const json& j, ChatMessage& m);
void to_json(json& j, const ChatRequest& r);
void from_json(const json& j, ChatRequest& r);
void to_json(json& j, const ChatResponse& r);
void from_json(const json& j, ChatResponse& r);

// Rough token count used when a backend does not report usage.
std::size_t approximate_tokens(std::string_view text);

class Backend {
 public:
  virtual ~Backend() = default;
  virtual ChatResponse send(const ChatRequest& request) = 0;
  virtual BackendKind kind() const = 0;
};

struct Price {
  double prompt_per_1k = 0.0;
  double completion_per_1k = 0.0;
};

// Model id -> price per 1K tokens. Loaded from
// {"models": {"<id>": {"prompt_per_1k": x, "completion_per_1k": y}}}.
using PriceTable = std::map<std::string, Price>;
PriceTable load_price_table(const std::filesystem::path& path);

struct StageUsage {
  std::size_t requests = 0;
  std::size_t cache_hits = 0;
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
  double seconds = 0.0;
};

// Aggregated gateway traffic for one run. total_requests counts upstream
// attempts (retries included) plus cache hits, so a fully cached rerun has
// cache_hits == total_requests. Token totals sum over every response handed
// back, cached ones included; estimated_cost covers upstream responses only.
struct UsageReport {
  std::size_t total_requests = 0;
  std::size_t cache_hits = 0;
  std::size_t retries = 0;
  std::size_t failed_requests = 0;
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
  std::map<std::string, double> wall_time_per_stage;
  std::map<std::string, StageUsage> per_stage;
  double estimated_cost = 0.0;
};

void to_json(json& j, const StageUsage& u);
void from_json(const json& j, StageUsage& u);
void to_json(json& j, const UsageReport& u);
void from_json(const json& j, UsageReport& u);

class UsageLedger {
 public:
  // Registers a run; `prior` seeds it with usage persisted by an earlier
  // process working on the same run directory.
  void begin_run(const std::string& run_id, std::optional<UsageReport> prior = std::nullopt);
  void record_response(const CallContext& ctx, const ChatResponse& response, double seconds,
                       double cost);
  void record_failure(const CallContext& ctx, int attempts, double seconds);
  void record_stage_time(const CallContext& ctx, double seconds);
  UsageReport report(const std::string& run_id) const;

 private:
  UsageReport& run(const std::string& run_id);

  mutable std::mutex mutex_;
  std::map<std::string, UsageReport> runs_;
};

// One file per request key under the cache directory holding canonical JSON
// {request, response, timestamp}.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  static std::string key(const ChatRequest& request);
  std::filesystem::path path_for(const ChatRequest& request) const;

  // A missing entry is nullopt. A corrupt or mismatching entry logs a
  // warning and is treated as missing.
  std::optional<ChatResponse> load(const ChatRequest& request) const;
  void store(const ChatRequest& request, const ChatResponse& response);

  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  std::mutex& lock_for(const std::string& key);

  std::filesystem::path dir_;
  std::array<std::mutex, 16> stripes_;
};

struct GatewayOptions {
  std::optional<std::filesystem::path> cache_dir;
  std::size_t concurrency = 8;
  PriceTable prices;
};

// Uniform chat-completion access over one backend, with optional response
// caching, a global limit on concurrent upstream calls, and usage accounting.
class Gateway {
 public:
  Gateway(std::shared_ptr<Backend> backend, GatewayOptions options);

  ChatResponse complete(const ChatRequest& request, const CallContext& ctx);
  // Falls back to complete() when no cache directory is configured.
  ChatResponse cached_complete(const ChatRequest& request, const CallContext& ctx);

  void begin_run(const std::string& run_id, std::optional<UsageReport> prior = std::nullopt);
  UsageReport usage_report(const std::string& run_id) const;
  UsageLedger& ledger() noexcept { return ledger_; }

  std::size_t upstream_calls() const noexcept { return upstream_calls_.load(); }
  BackendKind backend_kind() const { return backend_->kind(); }

 private:
  double cost_of(const ChatRequest& request, const ChatResponse& response) const;
  std::shared_ptr<std::mutex> key_lock(const std::string& key);

  std::shared_ptr<Backend> backend_;
  GatewayOptions options_;
  std::optional<ResponseCache> cache_;
  std::counting_semaphore<1024> slots_;
  UsageLedger ledger_;
  std::atomic<std::size_t> upstream_calls_{0};
  // One lock per request key in flight, so concurrent identical requests
  // make a single upstream call and the rest hit the cache.
  std::mutex inflight_mutex_;
  std::map<std::string, std::weak_ptr<std::mutex>> inflight_;
};

// Serves only what an earlier run left in a cache directory; a miss is a
// transport error.
class ReplayBackend : public Backend {
 public:
  explicit ReplayBackend(std::filesystem::path cache_dir);
  ChatResponse send(const ChatRequest& request) override;
  BackendKind kind() const override { return BackendKind::cache; }

 private:
  ResponseCache cache_;
};

}  // namespace format_adapter::llm
