#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <sys/wait.h>

#include "doctest.h"

#include "format_adapter/artifacts.hpp"
#include "format_adapter/error.hpp"
#include "format_adapter/runner.hpp"
#include "format_adapter/sim_backend.hpp"

using namespace format_adapter;
using namespace format_adapter::cli;
namespace fs = std::filesystem;

namespace {

const fs::path kDemo = fs::path(FORMAT_ADAPTER_DATA_DIR) / "demo";

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("fa_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

RunConfig demo_config(const std::string& run_name) {
  auto c = load_run_config(kDemo / "config.json");
  c.run_dir = fresh_dir(run_name);
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::config;
}

// Expands a scenario into a fresh directory and returns its run config.
RunConfig scenario_config(const std::string& name, const sim::Scenario& scenario) {
  const auto dir = fresh_dir(name);
  fs::create_directories(dir);
  const auto bundle = sim::expand_scenario(scenario);
  artifacts::write_json(dir / "task.json", bundle.task);
  artifacts::write_text(dir / "dataset.jsonl", dataset_to_jsonl(bundle.dataset));
  artifacts::write_json(dir / "profile.json", bundle.profile);
  artifacts::write_json(dir / "config.json",
                        json{{"task", "task.json"},
                             {"dataset", "dataset.jsonl"},
                             {"backend", {{"kind", "sim"}, {"profile", "profile.json"}}},
                             {"models", {{"default", "simulated"}}},
                             {"target_format_count", scenario.formats.size()},
                             {"seed", scenario.seed},
                             {"run_dir", "run"}});
  return load_run_config(dir / "config.json");
}

sim::ScenarioFormat scenario_format(std::string name, double accuracy) {
  sim::ScenarioFormat f;
  f.name = std::move(name);
  f.description = "Reason as " + f.name + ".";
  f.accuracy = accuracy;
  return f;
}

int run_cli(const std::string& args) {
  const std::string command = std::string(FORMAT_ADAPTER_CLI) + " --log-level off " + args +
                              " > /dev/null 2>&1";
  const int status = std::system(command.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("demo config loads and resolves paths") {
  const auto c = load_run_config(kDemo / "config.json");
  CHECK(c.backend == BackendChoice::sim);
  CHECK(c.task_path == kDemo / "task.json");
  CHECK(c.sim_profile == kDemo / "profile.json");
  CHECK(c.target_format_count == 6);
  CHECK(c.models.answer == "simulated");
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("full run, then a rerun that skips every stage") {
  auto config = demo_config("full");
  json first_metrics;
  std::string first_selection;
  {
    Runner runner(config);
    const auto metrics = runner.run_full();
    CHECK(metrics.n_questions == 8);
    CHECK(metrics.n_records == 48);
    CHECK(metrics.oracle_em >= metrics.vote_em);
    CHECK(runner.skipped_stages().empty());
    for (const std::string_view file : {artifacts::kRunFile, artifacts::kFormatsFile, artifacts::kRewrittenFile,
                             artifacts::kAnswersFile, artifacts::kScoresFile,
                             artifacts::kSelectionFile, artifacts::kMetricsFile,
                             artifacts::kUsageFile}) {
      CHECK_MESSAGE(fs::exists(runner.path(file)), std::string(file));
    }
    first_metrics = artifacts::read_json(runner.path(artifacts::kMetricsFile));
    first_selection = slurp(runner.path(artifacts::kSelectionFile));
    const auto rewritten = runner.rewritten_formats();
    CHECK(rewritten.formats.size() == 6);
    for (const auto& f : rewritten.formats) CHECK(f.rewritten_instruction.has_value());
  }
  {
    Runner runner(config);
    runner.run_full();
    CHECK(runner.skipped_stages().size() == std::size(kAllStages));
    CHECK(runner.gateway().upstream_calls() == 0);
    CHECK(artifacts::read_json(runner.path(artifacts::kMetricsFile)) == first_metrics);
    CHECK(slurp(runner.path(artifacts::kSelectionFile)) == first_selection);
  }
}

TEST_CASE("two runs in different directories agree") {
  Runner a(demo_config("same_a"));
  Runner b(demo_config("same_b"));
  const json ma = a.run_full();
  const json mb = b.run_full();
  CHECK(ma == mb);
  CHECK(slurp(a.path(artifacts::kSelectionFile)) == slurp(b.path(artifacts::kSelectionFile)));
}

TEST_CASE("resume after losing late artifacts uses only the cache") {
  auto config = demo_config("resume");
  json before;
  std::size_t requests_before = 0;
  {
    Runner runner(config);
    before = runner.run_full();
    requests_before = runner.usage().total_requests;
  }
  fs::remove(config.run_dir / std::string(artifacts::kMetricsFile));
  fs::remove(config.run_dir / std::string(artifacts::kScoresFile));
  Runner runner(config);
  const json after = runner.run_full();
  CHECK(runner.gateway().upstream_calls() == 0);
  CHECK(after["vote_em"] == before["vote_em"]);
  const auto usage = runner.usage();
  CHECK(usage.cache_hits == 48);
  CHECK(usage.total_requests == requests_before + 48);
}

TEST_CASE("partial answers are completed incrementally") {
  auto config = demo_config("partial");
  {
    Runner runner(config);
    runner.run_full();
  }
  // drop the second half of the answers and the stage status
  const auto answers_path = config.run_dir / std::string(artifacts::kAnswersFile);
  auto lines = artifacts::read_jsonl(answers_path);
  std::string kept;
  for (std::size_t i = 0; i < lines.size() / 2; ++i) kept += lines[i].dump() + "\n";
  artifacts::write_text(answers_path, kept);
  auto run = artifacts::read_json(config.run_dir / std::string(artifacts::kRunFile));
  run["stages"]["answer"] = "pending";
  artifacts::write_json(config.run_dir / std::string(artifacts::kRunFile), run);

  Runner runner(config);
  runner.run_full();
  CHECK(artifacts::read_jsonl(answers_path).size() == 48);
  CHECK(runner.gateway().upstream_calls() == 0);
}

TEST_CASE("changed selection settings redo selection only") {
  auto config = demo_config("reselect");
  {
    Runner runner(config);
    runner.run_full();
  }
  config.selection.strict_decrease = false;
  config.selection.trace = true;
  Runner runner(config);
  runner.run_full();
  const auto skipped = runner.skipped_stages();
  CHECK(skipped.size() == 4);
  CHECK(runner.gateway().upstream_calls() == 0);
  const auto selection = artifacts::read_json(runner.path(artifacts::kSelectionFile));
  CHECK(selection[0].contains("trace"));
}

TEST_CASE("a different generation config cannot reuse a run directory") {
  auto config = demo_config("mismatch");
  {
    Runner runner(config);
    runner.run_stage(StageName::formats);
  }
  config.target_format_count = 3;
  CHECK(code_of([&] { Runner again(config); }) == ErrorCode::config);
}

TEST_CASE("run directories are locked") {
  auto config = demo_config("locked");
  Runner first(config);
  CHECK(code_of([&] { Runner second(config); }) == ErrorCode::config);
}

TEST_CASE("stages need their inputs") {
  auto config = demo_config("deps");
  Runner runner(config);
  CHECK(code_of([&] { runner.run_stage(StageName::select); }) == ErrorCode::stage_dependency);
  CHECK(code_of([&] { runner.run_stage(StageName::answer); }) == ErrorCode::stage_dependency);
  runner.run_stage(StageName::formats);
  runner.run_stage(StageName::rewrite);
  runner.run_stage(StageName::answer);
  CHECK(code_of([&] { runner.run_stage(StageName::eval); }) == ErrorCode::stage_dependency);
}

TEST_CASE("remote backend without a key is a config error") {
  auto config = demo_config("remote");
  config.backend = BackendChoice::remote;
  config.remote.api_key_env = "FORMAT_ADAPTER_TEST_MISSING_KEY";
  ::unsetenv("FORMAT_ADAPTER_TEST_MISSING_KEY");
  CHECK(code_of([&] { Runner runner(config); }) == ErrorCode::config);
  CHECK_FALSE(fs::exists(config.run_dir / std::string(artifacts::kFormatsFile)));
}

TEST_CASE("replay backend serves a finished run from its cache") {
  auto config = demo_config("replay_source");
  json original;
  {
    Runner runner(config);
    original = runner.run_full();
  }
  auto replay = config;
  replay.backend = BackendChoice::replay;
  replay.replay_cache = config.run_dir / std::string(artifacts::kCacheDir);
  replay.run_dir = fresh_dir("replay_copy");
  Runner runner(replay);
  const json metrics = runner.run_full();
  CHECK(metrics["vote_em"] == original["vote_em"]);
  CHECK(runner.gateway().upstream_calls() == 0);
  CHECK(runner.usage().cache_hits == runner.usage().total_requests);
}

TEST_CASE("analyses over the demo run") {
  auto config = demo_config("analyses");
  Runner runner(config);
  runner.run_full();

  const auto corr = analyze_correlation(runner, 30, 7);
  CHECK(corr.points.size() == 30);
  CHECK(corr.correlation.pearson >= -1.0);
  CHECK(corr.correlation.pearson <= 1.0);
  std::vector<std::pair<double, double>> rows;
  for (const auto& p : corr.points) rows.emplace_back(p.estimator, p.vote_em);
  write_analysis(runner, "correlation", json{{"points", corr.points}}, rows);
  const auto csv = slurp(runner.path("analysis/correlation.csv"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 31);
  CHECK(csv.rfind("x,vote_em\n", 0) == 0);

  const auto avs = analyze_all_vs_selected(runner);
  CHECK(avs.delta == doctest::Approx(avs.selected_vote_em - avs.all_vote_em));

  const auto multi = repeated_sampling_curve(runner, {1, 3, 6}, SamplingMode::multi_format);
  REQUIRE(multi.size() == 3);
  CHECK(multi[2].scale == 6);
  CHECK(multi[2].vote_em == doctest::Approx(json(runner.run_full())["vote_em"].get<double>()));
  CHECK(code_of([&] { repeated_sampling_curve(runner, {7}, SamplingMode::multi_format); }) ==
        ErrorCode::precondition);
  CHECK(code_of([&] { repeated_sampling_curve(runner, {}, SamplingMode::single_format); }) ==
        ErrorCode::precondition);
  CHECK(code_of([&] { repeated_sampling_curve(runner, {0}, SamplingMode::single_format); }) ==
        ErrorCode::precondition);

  const auto single = repeated_sampling_curve(runner, {1, 3}, SamplingMode::single_format);
  REQUIRE(single.size() == 2);
  for (const auto& p : single) {
    CHECK(p.vote_em >= 0.0);
    CHECK(p.vote_em <= 100.0);
  }
}

TEST_CASE("sampling curve agrees at scale one on a deterministic profile") {
  sim::Scenario s;
  s.seed = 31;
  s.questions = 12;
  s.original = scenario_format("original", 1.0);
  for (int i = 0; i < 3; ++i) s.formats.push_back(scenario_format("exact " + std::to_string(i), 1.0));
  Runner runner(scenario_config("curve_exact", s));
  runner.run_full();
  const auto single = repeated_sampling_curve(runner, {1}, SamplingMode::single_format);
  const auto multi = repeated_sampling_curve(runner, {1}, SamplingMode::multi_format);
  CHECK(single[0].vote_em == doctest::Approx(100.0));
  CHECK(single[0].vote_em == multi[0].vote_em);
}

TEST_CASE("several formats beat repeated samples of one") {
  // the original instruction always gives the same answer per question,
  // while the formats err independently
  sim::Scenario s;
  s.seed = 32;
  s.questions = 40;
  s.original = scenario_format("original", 0.5);
  for (int i = 0; i < 8; ++i) s.formats.push_back(scenario_format("format " + std::to_string(i), 0.5));
  Runner runner(scenario_config("curve_mixed", s));
  runner.run_full();
  const std::vector<std::size_t> scales{1, 2, 4, 8};
  const auto single = repeated_sampling_curve(runner, scales, SamplingMode::single_format);
  const auto multi = repeated_sampling_curve(runner, scales, SamplingMode::multi_format);
  REQUIRE(single.size() == 4);
  REQUIRE(multi.size() == 4);
  for (std::size_t i = 1; i < scales.size(); ++i) {
    CHECK(single[i].vote_em == single[0].vote_em);
    CHECK(multi[i].vote_em >= single[i].vote_em);
  }
}

TEST_CASE("robustness across seeds") {
  auto config = demo_config("robust");
  const auto report = robustness_report(config, {1, 2, 3});
  CHECK(report.per_seed.size() == 3);
  CHECK(report.failed_seeds.empty());
  CHECK(report.min <= report.mean);
  CHECK(report.mean <= report.max);
  CHECK(fs::exists(config.run_dir / "analysis" / "robustness" / "seed-2" / "metrics.json"));
  CHECK(code_of([&] { robustness_report(config, {1}); }) == ErrorCode::precondition);
}

TEST_CASE("command line exit codes") {
  const auto config = (kDemo / "config.json").string();
  const auto dir = fresh_dir("binary").string();
  CHECK(run_cli("--version") == 0);
  CHECK(run_cli("--config " + config + " --run-dir " + dir + " select") == 5);
  CHECK(run_cli("--config " + config + " --run-dir " + dir + " run") == 0);
  CHECK(run_cli("--config " + config + " --run-dir " + dir + " --trace select") == 0);
  CHECK(run_cli("--config " + config + " --run-dir " + dir + " analyze correlation") == 0);
  CHECK(fs::exists(fs::path(dir) / "analysis" / "correlation.csv"));
  CHECK(run_cli("--config " + config + " --run-dir " + dir + " analyze usage") == 0);
  CHECK(run_cli("--config /nonexistent.json run") == 2);
  CHECK(run_cli("--config " + config + " --run-dir " + fresh_dir("binary_remote").string() +
                " --backend remote run") == (std::getenv("OPENAI_API_KEY") ? 3 : 2));
  CHECK(run_cli("--config " + config + " --run-dir " + fresh_dir("binary_replay").string() +
                " --backend replay run") == 3);
  CHECK(run_cli("--bogus-flag") == 2);
}
