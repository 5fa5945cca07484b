#include "format_adapter/gateway.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <sstream>
#include <thread>

#include "format_adapter/error.hpp"
#include "format_adapter/util.hpp"

namespace format_adapter::llm {

namespace fs = std::filesystem;

std::string_view to_string(Role role) {
  switch (role) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "user";
}

std::string_view to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::remote: return "remote";
    case BackendKind::simulated: return "simulated";
    case BackendKind::cache: return "cache";
  }
  return "remote";
}

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::format_gen: return "format-gen";
    case Stage::rewrite: return "rewrite";
    case Stage::answer: return "answer";
    case Stage::score: return "score";
    case Stage::select: return "select";
  }
  return "answer";
}

Role role_from_string(std::string_view s) {
  if (s == "system") return Role::system;
  if (s == "user") return Role::user;
  if (s == "assistant") return Role::assistant;
  throw Error(ErrorCode::protocol, "unknown message role '" + std::string(s) + "'");
}

BackendKind backend_kind_from_string(std::string_view s) {
  if (s == "remote") return BackendKind::remote;
  if (s == "simulated") return BackendKind::simulated;
  if (s == "cache") return BackendKind::cache;
  throw Error(ErrorCode::protocol, "unknown backend kind '" + std::string(s) + "'");
}

void ChatRequest::validate() const {
  if (messages.empty()) {
    throw Error(ErrorCode::validation, "chat request has no messages");
  }
  if (messages.back().role != Role::user) {
    throw Error(ErrorCode::validation, "last chat message must come from the user");
  }
  if (!(temperature >= 0.0)) {
    throw Error(ErrorCode::validation, "temperature must be >= 0");
  }
  if (!(top_p > 0.0 && top_p <= 1.0)) {
    throw Error(ErrorCode::validation, "top_p must lie in (0,1]");
  }
}

void to_json(json& j, const ChatMessage& m) {
  j = json{{"role", to_string(m.role)}, {"content", m.content}};
}

void from_json(const json& j, ChatMessage& m) {
  m.role = role_from_string(j.at("role").get<std::string>());
  m.content = j.at("content").get<std::string>();
}

void to_json(json& j, const ChatRequest& r) {
  j = json{{"model_id", r.model_id},
           {"messages", r.messages},
           {"temperature", r.temperature},
           {"top_p", r.top_p},
           {"max_tokens", r.max_tokens},
           {"seed", r.seed ? json(*r.seed) : json(nullptr)}};
}

void from_json(const json& j, ChatRequest& r) {
  r.model_id = j.at("model_id").get<std::string>();
  r.messages = j.at("messages").get<std::vector<ChatMessage>>();
  r.temperature = j.at("temperature").get<double>();
  r.top_p = j.at("top_p").get<double>();
  r.max_tokens = j.at("max_tokens").get<std::size_t>();
  const auto& seed = j.at("seed");
  r.seed = seed.is_null() ? std::nullopt : std::optional<std::uint64_t>(seed.get<std::uint64_t>());
}

void to_json(json& j, const ChatResponse& r) {
  j = json{{"text", r.text},
           {"prompt_tokens", r.prompt_tokens},
           {"completion_tokens", r.completion_tokens},
           {"cached", r.cached},
           {"backend", to_string(r.backend)},
           {"attempts", r.attempts}};
}

void from_json(const json& j, ChatResponse& r) {
  r.text = j.at("text").get<std::string>();
  r.prompt_tokens = j.at("prompt_tokens").get<std::size_t>();
  r.completion_tokens = j.at("completion_tokens").get<std::size_t>();
  r.cached = j.at("cached").get<bool>();
  r.backend = backend_kind_from_string(j.at("backend").get<std::string>());
  r.attempts = j.value("attempts", 1);
}

std::size_t approximate_tokens(std::string_view text) { return (text.size() + 3) / 4; }

PriceTable load_price_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::config, "cannot open price table " + path.string());
  PriceTable table;
  try {
    const json j = json::parse(in);
    for (const auto& [model, price] : j.at("models").items()) {
      table[model] = Price{price.at("prompt_per_1k").get<double>(),
                           price.at("completion_per_1k").get<double>()};
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::config, "invalid price table " + path.string() + ": " + e.what());
  }
  return table;
}

void to_json(json& j, const StageUsage& u) {
  j = json{{"requests", u.requests},
           {"cache_hits", u.cache_hits},
           {"prompt_tokens", u.prompt_tokens},
           {"completion_tokens", u.completion_tokens},
           {"seconds", u.seconds}};
}

void from_json(const json& j, StageUsage& u) {
  u.requests = j.at("requests").get<std::size_t>();
  u.cache_hits = j.at("cache_hits").get<std::size_t>();
  u.prompt_tokens = j.at("prompt_tokens").get<std::size_t>();
  u.completion_tokens = j.at("completion_tokens").get<std::size_t>();
  u.seconds = j.value("seconds", 0.0);
}

void to_json(json& j, const UsageReport& u) {
  j = json{{"total_requests", u.total_requests},
           {"cache_hits", u.cache_hits},
           {"retries", u.retries},
           {"failed_requests", u.failed_requests},
           {"prompt_tokens", u.prompt_tokens},
           {"completion_tokens", u.completion_tokens},
           {"wall_time_per_stage", u.wall_time_per_stage},
           {"per_stage", u.per_stage},
           {"estimated_cost", u.estimated_cost}};
}

void from_json(const json& j, UsageReport& u) {
  u.total_requests = j.at("total_requests").get<std::size_t>();
  u.cache_hits = j.at("cache_hits").get<std::size_t>();
  u.retries = j.value("retries", std::size_t{0});
  u.failed_requests = j.value("failed_requests", std::size_t{0});
  u.prompt_tokens = j.at("prompt_tokens").get<std::size_t>();
  u.completion_tokens = j.at("completion_tokens").get<std::size_t>();
  u.wall_time_per_stage = j.value("wall_time_per_stage", std::map<std::string, double>{});
  u.per_stage = j.value("per_stage", std::map<std::string, StageUsage>{});
  u.estimated_cost = j.value("estimated_cost", 0.0);
}

// ---------------------------------------------------------------------------

void UsageLedger::begin_run(const std::string& run_id, std::optional<UsageReport> prior) {
  std::lock_guard lock(mutex_);
  runs_[run_id] = prior.value_or(UsageReport{});
}

UsageReport& UsageLedger::run(const std::string& run_id) {
  // Traffic for a run nobody registered still gets recorded.
  return runs_[run_id];
}

void UsageLedger::record_response(const CallContext& ctx, const ChatResponse& response,
                                  double seconds, double cost) {
  std::lock_guard lock(mutex_);
  auto& r = run(ctx.run_id);
  auto& s = r.per_stage[std::string(to_string(ctx.stage))];
  const std::size_t requests = response.cached ? 1 : static_cast<std::size_t>(response.attempts);
  r.total_requests += requests;
  s.requests += requests;
  if (response.cached) {
    ++r.cache_hits;
    ++s.cache_hits;
  } else {
    r.retries += requests - 1;
    r.estimated_cost += cost;
  }
  r.prompt_tokens += response.prompt_tokens;
  r.completion_tokens += response.completion_tokens;
  s.prompt_tokens += response.prompt_tokens;
  s.completion_tokens += response.completion_tokens;
  s.seconds += seconds;
  r.wall_time_per_stage[std::string(to_string(ctx.stage))] += seconds;
}

void UsageLedger::record_failure(const CallContext& ctx, int attempts, double seconds) {
  std::lock_guard lock(mutex_);
  auto& r = run(ctx.run_id);
  auto& s = r.per_stage[std::string(to_string(ctx.stage))];
  const auto n = static_cast<std::size_t>(std::max(attempts, 1));
  r.total_requests += n;
  r.retries += n - 1;
  ++r.failed_requests;
  s.requests += n;
  s.seconds += seconds;
  r.wall_time_per_stage[std::string(to_string(ctx.stage))] += seconds;
}

void UsageLedger::record_stage_time(const CallContext& ctx, double seconds) {
  std::lock_guard lock(mutex_);
  auto& r = run(ctx.run_id);
  r.per_stage[std::string(to_string(ctx.stage))].seconds += seconds;
  r.wall_time_per_stage[std::string(to_string(ctx.stage))] += seconds;
}

UsageReport UsageLedger::report(const std::string& run_id) const {
  std::lock_guard lock(mutex_);
  const auto it = runs_.find(run_id);
  if (it == runs_.end()) {
    throw Error(ErrorCode::not_found, "no usage recorded for run '" + run_id + "'");
  }
  return it->second;
}

// ---------------------------------------------------------------------------

ResponseCache::ResponseCache(fs::path dir) : dir_(std::move(dir)) {}

std::string ResponseCache::key(const ChatRequest& request) {
  return sha256_hex(json(request).dump());
}

fs::path ResponseCache::path_for(const ChatRequest& request) const {
  return dir_ / (key(request) + ".json");
}

std::mutex& ResponseCache::lock_for(const std::string& key) {
  return stripes_[std::hash<std::string>{}(key) % stripes_.size()];
}

std::optional<ChatResponse> ResponseCache::load(const ChatRequest& request) const {
  const auto path = path_for(request);
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    const json entry = json::parse(buffer.str());
    if (entry.at("request").get<ChatRequest>() != request) {
      spdlog::warn("cache entry {} belongs to a different request; regenerating", path.string());
      return std::nullopt;
    }
    auto response = entry.at("response").get<ChatResponse>();
    response.cached = true;
    response.backend = BackendKind::cache;
    response.attempts = 0;
    return response;
  } catch (const std::exception& e) {
    spdlog::warn("ignoring corrupt cache entry {}: {}", path.string(), e.what());
    return std::nullopt;
  }
}

void ResponseCache::store(const ChatRequest& request, const ChatResponse& response) {
  const auto k = key(request);
  const auto now = std::chrono::system_clock::now();
  const json entry{{"request", request},
                   {"response", response},
                   {"timestamp", std::chrono::duration_cast<std::chrono::seconds>(
                                     now.time_since_epoch())
                                     .count()}};
  std::lock_guard lock(lock_for(k));
  fs::create_directories(dir_);
  const auto final_path = dir_ / (k + ".json");
  std::ostringstream tmp_name;
  tmp_name << k << ".tmp." << std::this_thread::get_id();
  const auto tmp_path = dir_ / tmp_name.str();
  {
    std::ofstream out(tmp_path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::config, "cannot write cache entry " + tmp_path.string());
    out << entry.dump(2) << '\n';
  }
  fs::rename(tmp_path, final_path);
}

// ---------------------------------------------------------------------------

Gateway::Gateway(std::shared_ptr<Backend> backend, GatewayOptions options)
    : backend_(std::move(backend)),
      options_(std::move(options)),
      slots_(static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(options_.concurrency, 1, 1024))) {
  if (!backend_) throw Error(ErrorCode::config, "gateway requires a backend");
  if (options_.cache_dir) cache_.emplace(*options_.cache_dir);
}

double Gateway::cost_of(const ChatRequest& request, const ChatResponse& response) const {
  const auto it = options_.prices.find(request.model_id);
  if (it == options_.prices.end()) return 0.0;
  return static_cast<double>(response.prompt_tokens) / 1000.0 * it->second.prompt_per_1k +
         static_cast<double>(response.completion_tokens) / 1000.0 * it->second.completion_per_1k;
}

ChatResponse Gateway::complete(const ChatRequest& request, const CallContext& ctx) {
  request.validate();
  slots_.acquire();
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  ChatResponse response;
  try {
    response = backend_->send(request);
  } catch (const TransportError& e) {
    slots_.release();
    upstream_calls_ += static_cast<std::size_t>(e.attempts());
    ledger_.record_failure(ctx, e.attempts(), elapsed());
    throw;
  } catch (...) {
    slots_.release();
    ++upstream_calls_;
    ledger_.record_failure(ctx, 1, elapsed());
    throw;
  }
  slots_.release();
  upstream_calls_ += static_cast<std::size_t>(std::max(response.attempts, 1));
  ledger_.record_response(ctx, response, elapsed(), cost_of(request, response));
  return response;
}

std::shared_ptr<std::mutex> Gateway::key_lock(const std::string& key) {
  std::lock_guard guard(inflight_mutex_);
  for (auto it = inflight_.begin(); it != inflight_.end();) {
    it = it->second.expired() ? inflight_.erase(it) : std::next(it);
  }
  auto& slot = inflight_[key];
  auto lock = slot.lock();
  if (!lock) {
    lock = std::make_shared<std::mutex>();
    slot = lock;
  }
  return lock;
}

ChatResponse Gateway::cached_complete(const ChatRequest& request, const CallContext& ctx) {
  if (!cache_) return complete(request, ctx);
  request.validate();
  const auto key_mutex = key_lock(ResponseCache::key(request));
  std::lock_guard key_guard(*key_mutex);
  const auto start = std::chrono::steady_clock::now();
  if (auto hit = cache_->load(request)) {
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ledger_.record_response(ctx, *hit, seconds, 0.0);
    return *hit;
  }
  auto response = complete(request, ctx);
  cache_->store(request, response);
  return response;
}

void Gateway::begin_run(const std::string& run_id, std::optional<UsageReport> prior) {
  ledger_.begin_run(run_id, std::move(prior));
}

UsageReport Gateway::usage_report(const std::string& run_id) const {
  return ledger_.report(run_id);
}

// ---------------------------------------------------------------------------

ReplayBackend::ReplayBackend(fs::path cache_dir) : cache_(std::move(cache_dir)) {}

ChatResponse ReplayBackend::send(const ChatRequest& request) {
  if (auto hit = cache_.load(request)) return *hit;
  throw TransportError("replay cache " + cache_.dir().string() + " has no entry for request " +
                           ResponseCache::key(request),
                       1, 0);
}

}  // namespace format_adapter::llm
