#include "format_adapter/runner.hpp"

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <chrono>
#include <exception>
#include <fstream>
#include <future>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "format_adapter/error.hpp"
#include "format_adapter/judge.hpp"
#include "format_adapter/prompts.hpp"
#include "format_adapter/remote_backend.hpp"
#include "format_adapter/util.hpp"

namespace format_adapter::cli {

namespace a = artifacts;

std::string_view to_string(BackendChoice b) {
  switch (b) {
    case BackendChoice::remote: return "remote";
    case BackendChoice::sim: return "sim";
    case BackendChoice::replay: return "replay";
  }
  return "sim";
}

BackendChoice backend_choice_from_string(std::string_view s) {
  if (s == "remote") return BackendChoice::remote;
  if (s == "sim" || s == "simulated") return BackendChoice::sim;
  if (s == "replay" || s == "cache") return BackendChoice::replay;
  throw Error(ErrorCode::config, "unknown backend '" + std::string(s) + "'");
}

std::string_view to_string(StageName s) {
  switch (s) {
    case StageName::formats: return "formats";
    case StageName::rewrite: return "rewrite";
    case StageName::answer: return "answer";
    case StageName::score: return "score";
    case StageName::select: return "select";
    case StageName::eval: return "eval";
  }
  return "formats";
}

std::string_view to_string(SamplingMode m) {
  return m == SamplingMode::single_format ? "single_format" : "multi_format";
}

// --- configuration -----------------------------------------------------------

namespace {

std::string_view mapping_name(ensemble::ScoreMapping m) {
  return m == ensemble::ScoreMapping::raw_score ? "raw_score" : "one_minus_score";
}

ensemble::ScoreMapping mapping_from(std::string_view s) {
  if (s == "one_minus_score") return ensemble::ScoreMapping::one_minus_score;
  if (s == "raw_score") return ensemble::ScoreMapping::raw_score;
  throw Error(ErrorCode::config, "unknown score mapping '" + std::string(s) + "'");
}

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::config, "cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return sha256_hex(buffer.str());
}

json selection_json(const SelectionSettings& s) {
  return json{{"order_policy", select::to_string(s.order)},
              {"strict_decrease", s.strict_decrease},
              {"trace", s.trace},
              {"score_mapping", mapping_name(s.mapping)}};
}

json decoding_json(const StageDecoding& d) {
  return json{{"format_gen", d.format_gen},
              {"rewrite", d.rewrite},
              {"answer", d.answer},
              {"judge", d.judge}};
}

}  // namespace

void RunConfig::validate() const {
  if (task_path.empty()) throw Error(ErrorCode::config, "no task file configured");
  if (dataset_path.empty()) throw Error(ErrorCode::config, "no dataset configured");
  if (run_dir.empty()) throw Error(ErrorCode::config, "no run directory configured");
  if (target_format_count < 1) throw Error(ErrorCode::config, "target_format_count must be >= 1");
  if (concurrency < 1) throw Error(ErrorCode::config, "concurrency must be >= 1");
  if (backend == BackendChoice::sim && sim_profile.empty()) {
    throw Error(ErrorCode::config, "the sim backend needs a profile path");
  }
  for (const auto* m : {&models.format_gen, &models.rewrite, &models.answer, &models.judge}) {
    if (m->empty()) throw Error(ErrorCode::config, "every stage needs a model id");
  }
}

RunConfig run_config_from_json(const json& j, const fs::path& base_dir) {
  auto resolve = [&](const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : (base_dir / path).lexically_normal();
  };
  RunConfig c;
  try {
    c.task_path = resolve(j.at("task").get<std::string>());
    c.dataset_path = resolve(j.at("dataset").get<std::string>());

    const auto backend = j.value("backend", json::object());
    c.backend = backend_choice_from_string(backend.value("kind", std::string("sim")));
    c.remote.base_url = backend.value("base_url", c.remote.base_url);
    c.remote.endpoint = backend.value("endpoint", c.remote.endpoint);
    c.remote.api_key_env = backend.value("api_key_env", c.remote.api_key_env);
    c.remote.max_attempts = backend.value("max_attempts", c.remote.max_attempts);
    c.remote.timeout_seconds = backend.value("timeout_seconds", c.remote.timeout_seconds);
    if (backend.contains("profile")) c.sim_profile = resolve(backend["profile"].get<std::string>());
    if (backend.contains("cache_dir")) c.replay_cache = resolve(backend["cache_dir"].get<std::string>());

    const auto models = j.value("models", json::object());
    const auto fallback = models.value("default", std::string("gpt-4o-mini"));
    c.models = {models.value("format_gen", fallback), models.value("rewrite", fallback),
                models.value("answer", fallback), models.value("judge", fallback)};

    const auto decoding = j.value("decoding", json::object());
    auto stage_decoding = [&](const char* key) {
      return decoding.contains(key) ? decoding[key].get<pipeline::Decoding>() : pipeline::Decoding{};
    };
    c.decoding = {stage_decoding("format_gen"), stage_decoding("rewrite"), stage_decoding("answer"),
                  stage_decoding("judge")};

    c.target_format_count = j.value("target_format_count", c.target_format_count);
    const auto selection = j.value("selection", json::object());
    c.selection.order =
        select::order_policy_from_string(selection.value("order_policy", std::string("descending_score")));
    c.selection.strict_decrease = selection.value("strict_decrease", true);
    c.selection.trace = selection.value("trace", false);
    c.selection.mapping = mapping_from(selection.value("score_mapping", std::string("one_minus_score")));
    c.judge_label_only = j.value("judge", json::object()).value("label_only", false);
    c.seed = j.value("seed", std::uint64_t{0});
    c.seeds = j.value("seeds", std::vector<std::uint64_t>{});
    c.run_dir = resolve(j.value("run_dir", std::string("runs/run")));
    if (j.contains("price_table") && !j["price_table"].is_null()) {
      c.price_table = resolve(j["price_table"].get<std::string>());
    }
    c.concurrency = j.value("concurrency", c.concurrency);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::config, std::string("invalid run configuration: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::config, "cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::config, "config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j, fs::absolute(path).parent_path());
}

json to_json(const RunConfig& c) {
  json backend{{"kind", to_string(c.backend)}};
  if (c.backend == BackendChoice::remote) {
    backend["base_url"] = c.remote.base_url;
    backend["endpoint"] = c.remote.endpoint;
    backend["api_key_env"] = c.remote.api_key_env;
    backend["max_attempts"] = c.remote.max_attempts;
    backend["timeout_seconds"] = c.remote.timeout_seconds;
  }
  if (!c.sim_profile.empty()) backend["profile"] = c.sim_profile.string();
  if (c.replay_cache) backend["cache_dir"] = c.replay_cache->string();
  json j{{"task", c.task_path.string()},
         {"dataset", c.dataset_path.string()},
         {"backend", backend},
         {"models",
          {{"format_gen", c.models.format_gen},
           {"rewrite", c.models.rewrite},
           {"answer", c.models.answer},
           {"judge", c.models.judge}}},
         {"decoding", decoding_json(c.decoding)},
         {"target_format_count", c.target_format_count},
         {"selection", selection_json(c.selection)},
         {"judge", {{"label_only", c.judge_label_only}}},
         {"seed", c.seed},
         {"seeds", c.seeds},
         {"run_dir", c.run_dir.string()},
         {"concurrency", c.concurrency}};
  j["price_table"] = c.price_table ? json(c.price_table->string()) : json(nullptr);
  return j;
}

std::string generation_hash(const RunConfig& c) {
  // The backend kind is left out: a simulated or remote run may be resumed
  // from its cache with the replay backend.
  const json basis{{"task", file_digest(c.task_path)},
                   {"dataset", file_digest(c.dataset_path)},
                   {"models",
                    {c.models.format_gen, c.models.rewrite, c.models.answer, c.models.judge}},
                   {"decoding", decoding_json(c.decoding)},
                   {"target_format_count", c.target_format_count},
                   {"judge_label_only", c.judge_label_only},
                   {"seed", c.seed},
                   {"templates", prompts::kTemplateVersion}};
  return sha256_hex(basis.dump());
}

std::shared_ptr<llm::Backend> make_backend(const RunConfig& config, const Dataset& dataset) {
  switch (config.backend) {
    case BackendChoice::remote: {
      llm::RemoteConfig rc;
      rc.base_url = config.remote.base_url;
      rc.endpoint = config.remote.endpoint;
      rc.api_key = llm::api_key_from_env(config.remote.api_key_env);
      if (rc.api_key.empty()) {
        throw Error(ErrorCode::config, "environment variable " + config.remote.api_key_env +
                                           " is not set; the remote backend needs an API key");
      }
      rc.timeout = std::chrono::seconds(config.remote.timeout_seconds);
      rc.retry.max_attempts = config.remote.max_attempts;
      return std::make_shared<llm::RemoteBackend>(std::move(rc));
    }
    case BackendChoice::sim:
      return std::make_shared<sim::SimulatedBackend>(sim::load_sim_profile(config.sim_profile),
                                                     sim::make_question_index(dataset));
    case BackendChoice::replay:
      return std::make_shared<llm::ReplayBackend>(
          config.replay_cache.value_or(config.run_dir / std::string(a::kCacheDir)));
  }
  throw Error(ErrorCode::config, "no backend configured");
}

// --- runner ------------------------------------------------------------------

namespace {

template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first;
  std::mutex first_mutex;
  auto work = [&] {
    while (!failed) {
      const auto i = next++;
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(first_mutex);
        if (!first) first = std::current_exception();
        failed = true;
      }
    }
  };
  const auto count = std::min(workers, n);
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < count; ++t) threads.emplace_back(work);
  work();
  for (auto& t : threads) t.join();
  if (first) std::rethrow_exception(first);
}

std::optional<llm::Stage> llm_stage(StageName s) {
  switch (s) {
    case StageName::formats: return llm::Stage::format_gen;
    case StageName::rewrite: return llm::Stage::rewrite;
    case StageName::answer: return llm::Stage::answer;
    case StageName::score: return llm::Stage::score;
    case StageName::select: return llm::Stage::select;
    case StageName::eval: return std::nullopt;
  }
  return std::nullopt;
}

std::string_view artifact_of(StageName s) {
  switch (s) {
    case StageName::formats: return a::kFormatsFile;
    case StageName::rewrite: return a::kRewrittenFile;
    case StageName::answer: return a::kAnswersFile;
    case StageName::score: return a::kScoresFile;
    case StageName::select: return a::kSelectionFile;
    case StageName::eval: return a::kMetricsFile;
  }
  return a::kFormatsFile;
}

pipeline::Decoding seeded(pipeline::Decoding d, std::uint64_t seed) {
  if (!d.seed) d.seed = seed;
  return d;
}

}  // namespace

Runner::Runner(RunConfig config, std::shared_ptr<llm::Backend> backend)
    : config_(std::move(config)) {
  config_.validate();
  task_ = load_task(config_.task_path);
  dataset_ = load_dataset(config_.dataset_path, task_.answer_kind);
  if (dataset_.empty()) throw Error(ErrorCode::validation, "dataset " + config_.dataset_path.string() + " is empty");
  if (!backend) backend = make_backend(config_, dataset_);

  lock_ = std::make_unique<a::RunLock>(config_.run_dir);
  run_id_ = config_.run_dir.filename().string();
  if (run_id_.empty()) run_id_ = "run";

  const auto hash = generation_hash(config_);
  stages_ = json::object();
  for (const auto s : kAllStages) stages_[std::string(to_string(s))] = "pending";
  const auto run_file = path(a::kRunFile);
  if (fs::exists(run_file)) {
    const auto recorded = a::read_json(run_file);
    if (recorded.value("generation_hash", std::string()) != hash) {
      throw Error(ErrorCode::config, "run directory " + config_.run_dir.string() +
                                         " was created with a different configuration; use a new "
                                         "--run-dir");
    }
    if (recorded.contains("stages") && recorded["stages"].is_object()) {
      for (const auto& [k, v] : recorded["stages"].items()) {
        if (stages_.contains(k)) stages_[k] = v;
      }
    }
    if (recorded.value("config", json::object()).value("selection", json::object()) !=
        selection_json(config_.selection)) {
      spdlog::info("selection settings changed; selection and evaluation will be redone");
      mark(StageName::select, false);
      mark(StageName::eval, false);
    }
  }

  std::optional<llm::UsageReport> prior;
  if (fs::exists(path(a::kUsageFile))) prior = a::load_usage(path(a::kUsageFile));

  llm::GatewayOptions options;
  options.cache_dir = config_.replay_cache && config_.backend == BackendChoice::replay
                          ? *config_.replay_cache
                          : config_.run_dir / std::string(a::kCacheDir);
  options.concurrency = config_.concurrency;
  if (config_.price_table) options.prices = llm::load_price_table(*config_.price_table);
  gateway_ = std::make_unique<llm::Gateway>(std::move(backend), std::move(options));
  gateway_->begin_run(run_id_, prior);
  write_run_file();
}

Runner::~Runner() = default;

llm::UsageReport Runner::usage() const { return gateway_->usage_report(run_id_); }

void Runner::write_run_file() const {
  json j{{"tool_version", kToolVersion},
         {"template_version", prompts::kTemplateVersion},
         {"generation_hash", generation_hash(config_)},
         {"config", to_json(config_)},
         {"stages", stages_}};
  j["config_hash"] = sha256_hex(j["config"].dump());
  a::write_json(path(a::kRunFile), j);
}

void Runner::persist_usage() const { a::write_json(path(a::kUsageFile), usage()); }

void Runner::mark(StageName stage, bool complete) {
  stages_[std::string(to_string(stage))] = complete ? "complete" : "pending";
}

bool Runner::stage_complete(StageName stage) const {
  if (stages_.value(std::string(to_string(stage)), std::string()) != "complete") return false;
  const auto file = path(artifact_of(stage));
  if (!fs::exists(file)) return false;
  // Loading validates the artifact's schema up front.
  switch (stage) {
    case StageName::formats: a::load_formats(file); break;
    case StageName::rewrite: {
      const auto set = a::load_formats(file);
      for (const auto& f : set.formats) {
        if (!f.rewritten_instruction) return false;
      }
      break;
    }
    case StageName::answer: a::load_answers(file); break;
    case StageName::score: a::load_scores(file); break;
    case StageName::select: a::load_selection(file); break;
    case StageName::eval: a::read_json(file).get<eval::RunMetrics>(); break;
  }
  return true;
}

void Runner::invalidate_after(StageName stage) {
  bool after = false;
  for (const auto s : kAllStages) {
    if (after) mark(s, false);
    if (s == stage) after = true;
  }
  // New formats or instructions make every downstream record stale.
  if (stage == StageName::formats || stage == StageName::rewrite) {
    for (const auto s : kAllStages) {
      if (static_cast<int>(s) > static_cast<int>(stage)) fs::remove(path(artifact_of(s)));
    }
  }
}

eval::RunMetrics Runner::run_full() {
  for (const auto s : kAllStages) run_stage(s);
  return a::read_json(path(a::kMetricsFile)).get<eval::RunMetrics>();
}

void Runner::run_stage(StageName stage) {
  const auto name = std::string(to_string(stage));
  if (stage_complete(stage)) {
    spdlog::info("stage {}: artifacts complete, skipping", name);
    skipped_.push_back(stage);
    return;
  }
  spdlog::info("stage {}: running", name);
  const auto start = std::chrono::steady_clock::now();
  try {
    switch (stage) {
      case StageName::formats: do_formats(); break;
      case StageName::rewrite: do_rewrite(); break;
      case StageName::answer: do_answer(); break;
      case StageName::score: do_score(); break;
      case StageName::select: do_select(); break;
      case StageName::eval: do_eval(); break;
    }
  } catch (const TransportError& e) {
    persist_usage();
    throw TransportError("stage " + name + ": " + e.what(), e.attempts(), e.http_status());
  } catch (const Error& e) {
    persist_usage();
    throw Error(e.code(), "stage " + name + ": " + e.what());
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (const auto s = llm_stage(stage)) gateway_->ledger().record_stage_time({run_id_, *s}, seconds);
  mark(stage, true);
  invalidate_after(stage);
  if (stage != StageName::eval) persist_usage();
  write_run_file();
  spdlog::info("stage {}: done in {:.2f}s", name, seconds);
}

void Runner::do_formats() {
  pipeline::GenerationOptions options;
  options.model_id = config_.models.format_gen;
  options.target_count = config_.target_format_count;
  options.decoding = seeded(config_.decoding.format_gen, config_.seed);
  const auto set = pipeline::generate_formats(client(), task_, options);
  a::write_json(path(a::kFormatsFile), set);
}

void Runner::do_rewrite() {
  auto set = a::load_formats(path(a::kFormatsFile));
  const auto decoding = seeded(config_.decoding.rewrite, config_.seed);
  std::vector<std::string> rewritten(set.formats.size());
  parallel_for(set.formats.size(), config_.concurrency, [&](std::size_t i) {
    auto format = set.formats[i];
    format.rewritten_instruction.reset();
    rewritten[i] = pipeline::rewrite_instruction(client(), task_, format, config_.models.rewrite, decoding);
  });
  for (std::size_t i = 0; i < set.formats.size(); ++i) set.formats[i].rewritten_instruction = rewritten[i];
  a::write_json(path(a::kRewrittenFile), set);
}

FormatSet Runner::rewritten_formats() const {
  auto set = a::load_formats(path(a::kRewrittenFile));
  for (const auto& f : set.formats) {
    if (!f.rewritten_instruction) {
      throw Error(ErrorCode::stage_dependency,
                  "rewritten.json lacks an instruction for format " + f.id + "; rerun the rewrite stage");
    }
  }
  return set;
}

void Runner::do_answer() {
  const auto set = rewritten_formats();
  const auto answers_path = path(a::kAnswersFile);
  std::set<std::pair<std::string, std::string>> done;
  if (fs::exists(answers_path)) {
    for (const auto& r : a::load_answers(answers_path)) done.insert({r.question_id, r.format_id});
  }
  struct Job {
    const DatasetRecord* question;
    const ReasoningFormat* format;
  };
  std::vector<Job> jobs;
  for (const auto& q : dataset_) {
    for (const auto& f : set.formats) {
      if (!done.count({q.id, f.id})) jobs.push_back({&q, &f});
    }
  }
  if (!done.empty()) spdlog::info("answer: {} records present, {} to generate", done.size(), jobs.size());

  const auto decoding = seeded(config_.decoding.answer, config_.seed);
  a::JsonlWriter writer(answers_path);
  parallel_for(jobs.size(), config_.concurrency, [&](std::size_t i) {
    const auto& job = jobs[i];
    auto raw = pipeline::generate_answer(client(), *job.format->rewritten_instruction,
                                         render_question(*job.question), config_.models.answer,
                                         decoding);
    writer.append(pipeline::make_answer_record(job.question->id, job.format->id, std::move(raw),
                                               task_.answer_kind));
  });
  a::sort_jsonl(answers_path);
}

void Runner::do_score() {
  if (!stage_complete(StageName::answer)) {
    throw Error(ErrorCode::stage_dependency, "answers.jsonl is missing or incomplete; run the answer stage first");
  }
  const auto answers = a::load_answers(path(a::kAnswersFile));
  const auto scores_path = path(a::kScoresFile);
  std::set<std::pair<std::string, std::string>> done;
  if (fs::exists(scores_path)) {
    for (const auto& r : a::load_scores(scores_path)) done.insert({r.question_id, r.format_id});
  }
  std::map<std::string, const DatasetRecord*> questions;
  for (const auto& q : dataset_) questions[q.id] = &q;

  std::vector<const pipeline::AnswerRecord*> jobs;
  for (const auto& r : answers) {
    if (!done.count({r.question_id, r.format_id})) jobs.push_back(&r);
  }
  judge::JudgeOptions options;
  options.model_id = config_.models.judge;
  options.decoding = seeded(config_.decoding.judge, config_.seed);
  options.label_only = config_.judge_label_only;

  a::JsonlWriter writer(scores_path);
  parallel_for(jobs.size(), config_.concurrency, [&](std::size_t i) {
    const auto& answer = *jobs[i];
    const auto q = questions.find(answer.question_id);
    if (q == questions.end()) {
      throw Error(ErrorCode::validation, "answers.jsonl refers to unknown question " + answer.question_id);
    }
    std::string shown = options.label_only ? answer.answer.value() : answer.raw_text;
    if (trim(shown).empty()) shown = std::string(ensemble::kNoAnswer);
    writer.append(judge::score_answer(client(), answer.question_id, answer.format_id,
                                      render_question(*q->second), shown, options));
  });
  a::sort_jsonl(scores_path);
}

std::vector<select::FormatRecord> Runner::records() const {
  return a::join_records(a::load_answers(path(a::kAnswersFile)), a::load_scores(path(a::kScoresFile)));
}

std::vector<select::SelectionResult> Runner::selections() const {
  return a::load_selection(path(a::kSelectionFile));
}

void Runner::do_select() {
  if (!stage_complete(StageName::score)) {
    throw Error(ErrorCode::stage_dependency, "scores.jsonl is missing or incomplete; run the score stage first");
  }
  const auto by_question = eval::group_by_question(records());
  select::SelectionOptions options{config_.selection.order, config_.selection.strict_decrease,
                                   config_.selection.mapping};
  std::vector<select::SelectionResult> results;
  std::vector<std::string> missing;
  for (const auto& q : dataset_) {
    const auto it = by_question.find(q.id);
    if (it == by_question.end()) {
      missing.push_back(q.id);
      continue;
    }
    auto result = select::greedy_select(it->second, options);
    if (!config_.selection.trace) result.trace.clear();
    results.push_back(std::move(result));
  }
  if (!missing.empty()) {
    throw Error(ErrorCode::incomplete_run, "no scored answers for " + std::to_string(missing.size()) +
                                               " questions, first " + missing.front());
  }
  a::write_json(path(a::kSelectionFile), results);
}

void Runner::do_eval() {
  persist_usage();
  const auto metrics = eval::evaluate_run(config_.run_dir, dataset_);
  a::write_json(path(a::kMetricsFile), metrics);
}

// --- analyses ----------------------------------------------------------------

void write_analysis(const Runner& run, const std::string& name, const json& body,
                    const std::vector<std::pair<double, double>>& rows) {
  const auto dir = run.path(a::kAnalysisDir);
  a::write_json(dir / (name + ".json"), body);
  if (rows.empty()) return;
  std::string csv = "x,vote_em\n";
  for (const auto& [x, y] : rows) csv += fmt::format("{},{}\n", x, y);
  a::write_text(dir / (name + ".csv"), csv);
}

CorrelationAnalysis analyze_correlation(Runner& run, std::size_t subsets, std::uint64_t seed) {
  CorrelationAnalysis out;
  out.points = eval::subset_correlation_points(run.records(), run.dataset(), subsets, seed,
                                               run.config().selection.mapping);
  out.correlation = eval::estimator_correlation(out.points);
  return out;
}

eval::AllVsSelected analyze_all_vs_selected(Runner& run) {
  return eval::compare_all_vs_selected(run.records(), run.selections(), run.dataset());
}

eval::RobustnessReport robustness_report(const RunConfig& config,
                                         const std::vector<std::uint64_t>& seeds,
                                         std::shared_ptr<llm::Backend> backend) {
  if (seeds.size() < 2) {
    throw Error(ErrorCode::precondition, "robustness needs at least two seeds");
  }
  std::vector<std::future<eval::SeedOutcome>> futures;
  for (const auto seed : seeds) {
    futures.push_back(std::async(std::launch::async, [config, seed, backend] {
      eval::SeedOutcome outcome;
      outcome.seed = seed;
      try {
        auto c = config;
        c.seed = seed;
        c.run_dir = config.run_dir / std::string(a::kAnalysisDir) / "robustness" /
                    ("seed-" + std::to_string(seed));
        Runner runner(c, backend);
        outcome.vote_em = runner.run_full().vote_em;
      } catch (const std::exception& e) {
        outcome.error = e.what();
        spdlog::error("robustness run for seed {} failed: {}", seed, e.what());
      }
      return outcome;
    }));
  }
  std::vector<eval::SeedOutcome> outcomes;
  for (auto& f : futures) outcomes.push_back(f.get());
  return eval::aggregate_robustness(std::move(outcomes));
}

std::vector<CurvePoint> repeated_sampling_curve(Runner& run, const std::vector<std::size_t>& scales,
                                                SamplingMode mode) {
  if (scales.empty()) throw Error(ErrorCode::precondition, "no sample scales given");
  for (const auto s : scales) {
    if (s < 1) throw Error(ErrorCode::precondition, "sample scales must be >= 1");
  }
  const auto& dataset = run.dataset();
  const auto& config = run.config();
  std::vector<CurvePoint> curve;

  if (mode == SamplingMode::single_format) {
    for (const auto k : scales) {
      std::vector<char> hit(dataset.size(), 0);
      parallel_for(dataset.size(), config.concurrency, [&](std::size_t i) {
        const auto samples = pipeline::self_consistency_answers(
            run.client(), run.task(), render_question(dataset[i]), k, config.seed,
            config.models.answer, config.decoding.answer.max_tokens);
        std::vector<ensemble::AnswerLabel> labels;
        for (const auto& s : samples) {
          if (s.text) labels.push_back(pipeline::extract_answer(*s.text, run.task().answer_kind).label);
        }
        const std::vector<double> no_scores(labels.size(), 0.0);
        hit[i] = eval::exact_match(ensemble::plurality(labels, no_scores), dataset[i].gold);
      });
      const auto hits = std::count(hit.begin(), hit.end(), 1);
      curve.push_back({k, 100.0 * static_cast<double>(hits) / static_cast<double>(dataset.size())});
    }
    return curve;
  }

  const auto formats = run.rewritten_formats().formats;
  const auto by_question = eval::group_by_question(run.records());
  select::SelectionOptions options{config.selection.order, config.selection.strict_decrease,
                                   config.selection.mapping};
  for (const auto k : scales) {
    if (k > formats.size()) {
      throw Error(ErrorCode::precondition, "scale " + std::to_string(k) + " exceeds the run's " +
                                               std::to_string(formats.size()) + " formats");
    }
    std::set<std::string> chosen;
    for (std::size_t i = 0; i < k; ++i) chosen.insert(formats[i].id);
    std::size_t hits = 0;
    for (const auto& q : dataset) {
      const auto it = by_question.find(q.id);
      if (it == by_question.end()) {
        throw Error(ErrorCode::incomplete_run, "no records for question " + q.id);
      }
      std::vector<select::FormatRecord> subset;
      for (const auto& r : it->second) {
        if (chosen.count(r.format_id)) subset.push_back(r);
      }
      if (subset.empty()) continue;
      hits += eval::exact_match(select::greedy_select(subset, options).final_answer, q.gold);
    }
    curve.push_back({k, 100.0 * static_cast<double>(hits) / static_cast<double>(dataset.size())});
  }
  return curve;
}

}  // namespace format_adapter::cli
