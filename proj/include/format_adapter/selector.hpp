#pragma once

// Per-question answer selection: greedily grow a subset of format answers
// while the multi-format error estimate strictly decreases, then vote.

#include <span>
#include <string>
#include <vector>

#include "format_adapter/ensemble_math.hpp"
#include "json.hpp"

namespace format_adapter::select {

using json = nlohmann::json;

struct FormatRecord {
  std::string question_id;
  std::string format_id;
  ensemble::AnswerLabel answer;
  double score = 0.0;         // judge score in [0,1]
  std::string raw_text_ref;   // hash of the raw answer text
};

enum class OrderPolicy {
  descending_score,  // highest score first, ties in input order
  generation,        // input order
};

std::string_view to_string(OrderPolicy policy);
OrderPolicy order_policy_from_string(std::string_view s);

struct SelectionOptions {
  OrderPolicy order = OrderPolicy::descending_score;
  bool strict_decrease = true;  // false keeps records that leave the value unchanged
  ensemble::ScoreMapping mapping = ensemble::ScoreMapping::one_minus_score;
};

enum class TraceAction { kept, removed };

struct TraceEntry {
  std::string format_id;
  TraceAction action = TraceAction::kept;
  double value_before = 0.0;
  double value_after = 0.0;
};

struct SelectionResult {
  std::string question_id;
  std::vector<std::string> selected_format_ids;  // in the order they were kept
  ensemble::ErrorEstimate estimate;
  std::vector<TraceEntry> trace;  // seed first, then every other record once
  ensemble::AnswerLabel final_answer;
};

void to_json(json& j, const SelectionResult& r);
void from_json(const json& j, SelectionResult& r);

// All records must share one question id. Throws empty-set on no records.
SelectionResult greedy_select(std::span<const FormatRecord> records,
                              const SelectionOptions& options = {});

struct BruteForceResult {
  std::vector<std::string> best_subset_ids;  // in input order
  double best_value = 0.0;
};

inline constexpr std::size_t kBruteForceCap = 14;

// Exhaustive minimum of the estimator over all non-empty subsets. Ties go to
// the smaller subset, then to the lexicographically smaller sorted id list.
BruteForceResult brute_force_select(std::span<const FormatRecord> records,
                                    std::size_t max_m = kBruteForceCap,
                                    ensemble::ScoreMapping mapping =
                                        ensemble::ScoreMapping::one_minus_score);

// Plurality over the records' answers, ties broken by summed score.
ensemble::AnswerLabel final_vote(std::span<const FormatRecord> records);

// Estimate over a set of records, as used by the selector.
ensemble::ErrorEstimate estimate_of(std::span<const FormatRecord> records,
                                    ensemble::ScoreMapping mapping =
                                        ensemble::ScoreMapping::one_minus_score);

}  // namespace format_adapter::select
