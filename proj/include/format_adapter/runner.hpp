#pragma once

// Run-directory orchestration: configuration, the resumable stage sequence
// formats -> rewrite -> answer -> score -> select -> eval, and the analyses
// that operate on finished runs.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "format_adapter/artifacts.hpp"
#include "format_adapter/eval.hpp"
#include "format_adapter/gateway.hpp"
#include "format_adapter/pipeline.hpp"
#include "format_adapter/selector.hpp"
#include "format_adapter/sim_backend.hpp"
#include "format_adapter/task.hpp"

namespace format_adapter::cli {

namespace fs = std::filesystem;

inline constexpr std::string_view kToolVersion = "0.1.0";

enum class BackendChoice { remote, sim, replay };

std::string_view to_string(BackendChoice b);
BackendChoice backend_choice_from_string(std::string_view s);

struct RemoteSettings {
  std::string base_url = "https://api.openai.com";
  std::string endpoint = "/v1/chat/completions";
  std::string api_key_env = "OPENAI_API_KEY";
  int max_attempts = 5;
  int timeout_seconds = 120;
};

struct StageModels {
  std::string format_gen;
  std::string rewrite;
  std::string answer;
  std::string judge;
};

struct StageDecoding {
  pipeline::Decoding format_gen;
  pipeline::Decoding rewrite;
  pipeline::Decoding answer;
  pipeline::Decoding judge;
};

struct SelectionSettings {
  select::OrderPolicy order = select::OrderPolicy::descending_score;
  bool strict_decrease = true;
  bool trace = false;
  ensemble::ScoreMapping mapping = ensemble::ScoreMapping::one_minus_score;
};

struct RunConfig {
  fs::path task_path;
  fs::path dataset_path;
  BackendChoice backend = BackendChoice::sim;
  RemoteSettings remote;
  fs::path sim_profile;
  std::optional<fs::path> replay_cache;  // defaults to the run's own cache
  StageModels models;
  StageDecoding decoding;
  std::size_t target_format_count = 15;
  SelectionSettings selection;
  bool judge_label_only = false;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds;  // for robustness analysis
  fs::path run_dir;
  std::optional<fs::path> price_table;
  std::size_t concurrency = 8;

  // Paths must be set, the backend must have what it needs, counts positive.
  void validate() const;
};

// Relative paths in the file resolve against the file's directory.
RunConfig load_run_config(const fs::path& path);
RunConfig run_config_from_json(const json& j, const fs::path& base_dir);
json to_json(const RunConfig& c);

// Hash over the settings that determine generated content.
std::string generation_hash(const RunConfig& c);

enum class StageName { formats, rewrite, answer, score, select, eval };
inline constexpr StageName kAllStages[] = {StageName::formats, StageName::rewrite,
                                           StageName::answer,  StageName::score,
                                           StageName::select,  StageName::eval};
std::string_view to_string(StageName s);

class Runner {
 public:
  // Opens (or creates) the run directory and builds the backend. A remote
  // backend without an API key fails here, before any stage runs.
  // `backend` replaces the configured backend when given.
  explicit Runner(RunConfig config, std::shared_ptr<llm::Backend> backend = nullptr);
  ~Runner();

  // Runs every stage, skipping stages whose artifacts are complete.
  eval::RunMetrics run_full();
  // Runs one stage; upstream artifacts must exist.
  void run_stage(StageName stage);

  const RunConfig& config() const noexcept { return config_; }
  const TaskSpec& task() const noexcept { return task_; }
  const Dataset& dataset() const noexcept { return dataset_; }
  llm::Gateway& gateway() noexcept { return *gateway_; }
  llm::UsageReport usage() const;
  std::vector<StageName> skipped_stages() const { return skipped_; }

  // Joined answer/score records and selections of a finished run.
  std::vector<select::FormatRecord> records() const;
  std::vector<select::SelectionResult> selections() const;
  FormatSet rewritten_formats() const;

  fs::path path(std::string_view file) const { return config_.run_dir / std::string(file); }
  pipeline::StageClient client() { return {*gateway_, run_id_}; }

 private:
  bool stage_complete(StageName stage) const;
  void mark(StageName stage, bool complete);
  void invalidate_after(StageName stage);
  void write_run_file() const;
  void persist_usage() const;

  void do_formats();
  void do_rewrite();
  void do_answer();
  void do_score();
  void do_select();
  void do_eval();

  RunConfig config_;
  TaskSpec task_;
  Dataset dataset_;
  std::unique_ptr<artifacts::RunLock> lock_;
  std::unique_ptr<llm::Gateway> gateway_;
  std::string run_id_;
  json stages_;
  std::vector<StageName> skipped_;
};

// Builds the configured backend (not used when a backend is injected).
std::shared_ptr<llm::Backend> make_backend(const RunConfig& config, const Dataset& dataset);

// --- analyses over finished runs -------------------------------------------

struct CorrelationAnalysis {
  std::vector<eval::CorrelationPoint> points;
  eval::Correlation correlation;
};

CorrelationAnalysis analyze_correlation(Runner& run, std::size_t subsets, std::uint64_t seed);
eval::AllVsSelected analyze_all_vs_selected(Runner& run);

// Runs the whole pipeline once per seed under <run_dir>/analysis/robustness.
eval::RobustnessReport robustness_report(const RunConfig& config,
                                         const std::vector<std::uint64_t>& seeds,
                                         std::shared_ptr<llm::Backend> backend = nullptr);

enum class SamplingMode { single_format, multi_format };
std::string_view to_string(SamplingMode m);

struct CurvePoint {
  std::size_t scale = 0;
  double vote_em = 0.0;
};

// single_format: plurality over `scale` self-consistency samples under the
// original instruction. multi_format: greedy selection and vote over the
// first `scale` formats of the finished run.
std::vector<CurvePoint> repeated_sampling_curve(Runner& run, const std::vector<std::size_t>& scales,
                                                SamplingMode mode);

// Writes <run>/analysis/<name>.json and, when rows are given, <name>.csv
// with columns x,vote_em.
void write_analysis(const Runner& run, const std::string& name, const json& body,
                    const std::vector<std::pair<double, double>>& rows = {});

}  // namespace format_adapter::cli
