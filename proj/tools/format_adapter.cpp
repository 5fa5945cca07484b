#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "format_adapter/artifacts.hpp"
#include "format_adapter/error.hpp"
#include "format_adapter/runner.hpp"
#include "format_adapter/sim_backend.hpp"

using namespace format_adapter;
namespace fs = std::filesystem;

namespace {

struct Overrides {
  std::string config;
  std::string run_dir;
  std::string backend;
  std::string profile;
  std::optional<std::size_t> formats;
  std::optional<std::uint64_t> seed;
  bool trace = false;
  std::optional<std::size_t> concurrency;
};

cli::RunConfig resolve_config(const Overrides& o) {
  if (o.config.empty()) throw Error(ErrorCode::config, "--config is required");
  auto c = cli::load_run_config(o.config);
  if (!o.run_dir.empty()) c.run_dir = fs::absolute(o.run_dir);
  if (!o.backend.empty()) c.backend = cli::backend_choice_from_string(o.backend);
  if (!o.profile.empty()) c.sim_profile = fs::absolute(o.profile);
  if (o.formats) c.target_format_count = *o.formats;
  if (o.seed) c.seed = *o.seed;
  if (o.trace) c.selection.trace = true;
  if (o.concurrency) c.concurrency = *o.concurrency;
  return c;
}

void print_json(const json& j) { std::cout << j.dump(2) << std::endl; }

std::string one_line(std::string s) {
  for (auto pos = s.find('\n'); pos != std::string::npos; pos = s.find('\n', pos + 2)) {
    s.replace(pos, 1, "\\n");
  }
  return s;
}

int fail(ErrorCode code, const std::string& message) {
  std::cerr << "error[" << to_string(code) << "]: " << one_line(message) << std::endl;
  return exit_code_for(code);
}

void simulate(const std::string& scenario_path, const std::string& out_dir,
              const std::string& dataset_path) {
  const auto scenario = sim::load_scenario(scenario_path);
  std::optional<Dataset> questions;
  if (!dataset_path.empty()) {
    const auto kind = scenario.answer_kind;
    questions = load_dataset(dataset_path, kind);
  }
  const auto bundle = sim::expand_scenario(scenario, questions);
  const fs::path out(out_dir);
  artifacts::write_json(out / "task.json", bundle.task);
  artifacts::write_text(out / "dataset.jsonl", dataset_to_jsonl(bundle.dataset));
  artifacts::write_json(out / "profile.json", bundle.profile);
  artifacts::write_json(out / "config.json",
                        json{{"task", "task.json"},
                             {"dataset", "dataset.jsonl"},
                             {"backend", {{"kind", "sim"}, {"profile", "profile.json"}}},
                             {"models", {{"default", "simulated"}}},
                             {"target_format_count", scenario.formats.size()},
                             {"seed", scenario.seed},
                             {"run_dir", "run"}});
  spdlog::info("wrote task.json, dataset.jsonl ({} questions), profile.json and config.json to {}",
               bundle.dataset.size(), out.string());
}

std::vector<std::pair<double, double>> curve_rows(const std::vector<cli::CurvePoint>& curve) {
  std::vector<std::pair<double, double>> rows;
  for (const auto& p : curve) rows.emplace_back(static_cast<double>(p.scale), p.vote_em);
  return rows;
}

json curve_json(const std::vector<cli::CurvePoint>& curve) {
  json j = json::array();
  for (const auto& p : curve) j.push_back({{"scale", p.scale}, {"vote_em", p.vote_em}});
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("format-adapter"));
  spdlog::set_pattern("[%l] %v");

  CLI::App app{"Select reasoning formats per question and evaluate the voted answers."};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(cli::kToolVersion));

  Overrides o;
  std::string log_level = "info";
  app.add_option("--config", o.config, "Run configuration (JSON)");
  app.add_option("--run-dir", o.run_dir, "Run directory (overrides the config)");
  app.add_option("--backend", o.backend, "Backend: remote, sim or replay")
      ->check(CLI::IsMember({"remote", "sim", "replay"}));
  app.add_option("--profile", o.profile, "Simulation profile for the sim backend");
  app.add_option("--formats", o.formats, "Number of reasoning formats to generate");
  app.add_option("--seed", o.seed, "Decoding seed");
  app.add_flag("--trace", o.trace, "Keep the per-format selection trace");
  app.add_option("--concurrency", o.concurrency, "Concurrent model calls");
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  auto* run_cmd = app.add_subcommand("run", "Run every stage, resuming where possible");
  struct StageCommand {
    CLI::App* app;
    cli::StageName stage;
  };
  std::vector<StageCommand> stage_commands{
      {app.add_subcommand("formats", "Generate reasoning formats"), cli::StageName::formats},
      {app.add_subcommand("rewrite", "Rewrite the instruction for each format"), cli::StageName::rewrite},
      {app.add_subcommand("answer", "Answer every question under every format"), cli::StageName::answer},
      {app.add_subcommand("score", "Score every answer with the judge"), cli::StageName::score},
      {app.add_subcommand("select", "Select formats per question and vote"), cli::StageName::select},
      {app.add_subcommand("eval", "Compute metrics.json"), cli::StageName::eval},
  };

  auto* analyze = app.add_subcommand("analyze", "Analyses over a finished run");
  analyze->require_subcommand(1);
  std::size_t subsets = 30;
  std::uint64_t subset_seed = 7;
  auto* correlation = analyze->add_subcommand("correlation", "Estimator vs vote EM over random format subsets");
  correlation->add_option("--subsets", subsets, "Number of random subsets")->capture_default_str();
  correlation->add_option("--seed", subset_seed, "Subset sampling seed")->capture_default_str();
  auto* all_vs_selected = analyze->add_subcommand("all-vs-selected", "Vote over all formats vs selected formats");
  std::vector<std::uint64_t> seeds;
  auto* robustness = analyze->add_subcommand("robustness", "Rerun the pipeline under several seeds");
  robustness->add_option("--seeds", seeds, "Seeds (defaults to the config's seeds)")->delimiter(',');
  std::vector<std::size_t> scales{1, 2, 4, 8};
  std::string mode = "both";
  auto* curve = analyze->add_subcommand("sampling-curve", "Vote EM against sample count");
  curve->add_option("--scales", scales, "Sample counts")->delimiter(',');
  curve->add_option("--mode", mode, "single, multi or both")
      ->check(CLI::IsMember({"single", "multi", "both"}));
  auto* usage = analyze->add_subcommand("usage", "Report gateway usage");

  std::string scenario_path;
  std::string out_dir;
  std::string questions_path;
  auto* simulate_cmd = app.add_subcommand("simulate", "Expand a scenario into task, dataset and profile");
  simulate_cmd->add_option("--scenario", scenario_path, "Scenario description (JSON)")->required();
  simulate_cmd->add_option("--out", out_dir, "Output directory")->required();
  simulate_cmd->add_option("--dataset", questions_path, "Use these questions instead of synthetic ones");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail(ErrorCode::config, e.what());
  }

  try {
    spdlog::set_level(spdlog::level::from_str(log_level));

    if (simulate_cmd->parsed()) {
      simulate(scenario_path, out_dir, questions_path);
      return 0;
    }

    auto config = resolve_config(o);

    if (run_cmd->parsed()) {
      cli::Runner runner(config);
      print_json(runner.run_full());
      return 0;
    }
    for (const auto& sc : stage_commands) {
      if (sc.app->parsed()) {
        cli::Runner runner(config);
        runner.run_stage(sc.stage);
        if (sc.stage == cli::StageName::eval) {
          print_json(artifacts::read_json(runner.path(artifacts::kMetricsFile)));
        }
        return 0;
      }
    }

    if (analyze->parsed()) {
      if (robustness->parsed()) {
        const auto list = seeds.empty() ? config.seeds : seeds;
        const auto report = cli::robustness_report(config, list);
        cli::Runner runner(config);
        std::vector<std::pair<double, double>> rows;
        for (const auto& s : report.per_seed) {
          if (s.vote_em) rows.emplace_back(static_cast<double>(s.seed), *s.vote_em);
        }
        write_analysis(runner, "robustness", report, rows);
        print_json(report);
        return report.failed_seeds.empty() ? 0 : exit_code_for(ErrorCode::incomplete_run);
      }

      cli::Runner runner(config);
      if (correlation->parsed()) {
        const auto result = cli::analyze_correlation(runner, subsets, subset_seed);
        std::vector<std::pair<double, double>> rows;
        for (const auto& p : result.points) rows.emplace_back(p.estimator, p.vote_em);
        write_analysis(runner, "correlation",
                       json{{"subsets", subsets},
                            {"seed", subset_seed},
                            {"correlation", result.correlation},
                            {"points", result.points}},
                       rows);
        std::cout << "pearson r = " << result.correlation.pearson
                  << ", spearman rho = " << result.correlation.spearman << std::endl;
      } else if (all_vs_selected->parsed()) {
        const auto result = cli::analyze_all_vs_selected(runner);
        write_analysis(runner, "all_vs_selected", result);
        print_json(result);
      } else if (curve->parsed()) {
        json out = json::object();
        for (const auto& [name, m] : {std::pair{"single", cli::SamplingMode::single_format},
                                      std::pair{"multi", cli::SamplingMode::multi_format}}) {
          if (mode != "both" && mode != name) continue;
          const auto points = cli::repeated_sampling_curve(runner, scales, m);
          write_analysis(runner, std::string("sampling_curve_") + name, curve_json(points),
                         curve_rows(points));
          out[std::string(cli::to_string(m))] = curve_json(points);
        }
        print_json(out);
      } else if (usage->parsed()) {
        const json report = runner.usage();
        write_analysis(runner, "usage", report);
        print_json(report);
      }
      return 0;
    }
  } catch (const Error& e) {
    return fail(e.code(), e.what());
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << one_line(e.what()) << std::endl;
    return 1;
  }
  return 0;
}
