#pragma once

// Exact-match evaluation of runs and the follow-up analyses: all formats
// versus selected formats, score quality, estimator/accuracy correlation,
// robustness across seeds.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "format_adapter/gateway.hpp"
#include "format_adapter/normalize.hpp"
#include "format_adapter/selector.hpp"
#include "format_adapter/task.hpp"

namespace format_adapter::eval {

struct RunMetrics {
  double vote_em = 0.0;              // percent of questions whose final answer is gold
  double oracle_em = 0.0;            // percent where any generated answer is gold
  double oracle_selected_em = 0.0;   // same, restricted to the selected formats
  std::size_t n_questions = 0;
  std::size_t n_records = 0;
  std::size_t no_answer_records = 0;
  double avg_distinct_answers = 0.0;
  std::optional<double> score_quality;
  // Pearson r between each question's selected estimate and whether its vote
  // was correct; absent when undefined.
  std::optional<double> estimator_correlation;
  std::optional<llm::UsageReport> usage;
};

// Wall-clock fields of the usage report are left out so that reruns
// produce identical files.
void to_json(json& j, const RunMetrics& m);
void from_json(const json& j, RunMetrics& m);

// Requires records and a selection for every dataset id.
RunMetrics evaluate(const Dataset& dataset, std::span<const select::FormatRecord> records,
                    std::span<const select::SelectionResult> selections);

// Reads answers, scores, selection and usage from a run directory.
RunMetrics evaluate_run(const std::filesystem::path& run_dir, const Dataset& dataset);

// Mean over records of score (correct) or 1 - score (incorrect), times 100.
double score_quality(std::span<const select::FormatRecord> records, const Dataset& dataset);

double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);

struct CorrelationPoint {
  double estimator = 0.0;  // mean estimate over the dataset
  double vote_em = 0.0;
  std::vector<std::string> format_ids;
};

struct Correlation {
  double pearson = 0.0;
  double spearman = 0.0;
};

// At least 3 points; a constant series is an undefined-correlation error.
Correlation estimator_correlation(std::span<const CorrelationPoint> points);

// Samples random format subsets and, per subset, averages the estimator over
// all questions and measures the EM of a plain plurality vote.
std::vector<CorrelationPoint> subset_correlation_points(
    std::span<const select::FormatRecord> records, const Dataset& dataset, std::size_t subsets,
    std::uint64_t seed, ensemble::ScoreMapping mapping = ensemble::ScoreMapping::one_minus_score);

struct AllVsSelected {
  double all_vote_em = 0.0;
  double selected_vote_em = 0.0;
  double delta = 0.0;
};

AllVsSelected compare_all_vs_selected(std::span<const select::FormatRecord> records,
                                      std::span<const select::SelectionResult> selections,
                                      const Dataset& dataset);

struct SeedOutcome {
  std::uint64_t seed = 0;
  std::optional<double> vote_em;  // absent when the run failed
  std::string error;
};

struct RobustnessReport {
  std::vector<SeedOutcome> per_seed;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
  double min = 0.0;
  double max = 0.0;
  std::vector<std::uint64_t> failed_seeds;
};

RobustnessReport aggregate_robustness(std::vector<SeedOutcome> outcomes);

void to_json(json& j, const Correlation& c);
void to_json(json& j, const CorrelationPoint& p);
void to_json(json& j, const AllVsSelected& a);
void to_json(json& j, const RobustnessReport& r);

// Per-question vote EM over arbitrary grouped answers; used by the analyses.
double vote_em_of(const Dataset& dataset,
                  const std::map<std::string, std::vector<select::FormatRecord>>& by_question);

std::map<std::string, std::vector<select::FormatRecord>> group_by_question(
    std::span<const select::FormatRecord> records);

}  // namespace format_adapter::eval
