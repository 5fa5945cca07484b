#include "format_adapter/selector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "format_adapter/error.hpp"

namespace format_adapter::select {

using ensemble::AnswerLabel;
using ensemble::ErrorEstimate;

namespace {

constexpr double kTieTolerance = 1e-12;

void check_records(std::span<const FormatRecord> records) {
  if (records.empty()) throw Error(ErrorCode::empty_set, "no format records to select from");
  for (const auto& r : records) {
    if (r.question_id != records.front().question_id) {
      throw Error(ErrorCode::validation, "records mix questions " + records.front().question_id +
                                             " and " + r.question_id);
    }
    if (!(r.score >= 0.0 && r.score <= 1.0)) {
      throw Error(ErrorCode::validation, "score outside [0,1] for format " + r.format_id);
    }
  }
}

std::vector<ensemble::ScoredAnswer> scored(std::span<const FormatRecord> records) {
  std::vector<ensemble::ScoredAnswer> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({r.answer, r.score});
  return out;
}

}  // namespace

std::string_view to_string(OrderPolicy policy) {
  return policy == OrderPolicy::generation ? "generation" : "descending_score";
}

OrderPolicy order_policy_from_string(std::string_view s) {
  if (s == "descending_score") return OrderPolicy::descending_score;
  if (s == "generation") return OrderPolicy::generation;
  throw Error(ErrorCode::config, "unknown order policy '" + std::string(s) + "'");
}

ErrorEstimate estimate_of(std::span<const FormatRecord> records, ensemble::ScoreMapping mapping) {
  const auto s = scored(records);
  return ensemble::format_error_estimate(s, mapping);
}

AnswerLabel final_vote(std::span<const FormatRecord> records) {
  if (records.empty()) throw Error(ErrorCode::empty_set, "cannot vote over an empty set");
  std::vector<AnswerLabel> answers;
  std::vector<double> scores;
  for (const auto& r : records) {
    answers.push_back(r.answer);
    scores.push_back(r.score);
  }
  return ensemble::plurality(answers, scores);
}

SelectionResult greedy_select(std::span<const FormatRecord> records,
                              const SelectionOptions& options) {
  check_records(records);

  std::size_t seed = 0;
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].score > records[seed].score) seed = i;
  }

  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (options.order == OrderPolicy::descending_score) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return records[a].score > records[b].score;
    });
  }

  std::vector<FormatRecord> selected{records[seed]};
  auto current = estimate_of(selected, options.mapping);

  SelectionResult result;
  result.question_id = records.front().question_id;
  result.trace.push_back({records[seed].format_id, TraceAction::kept, current.value, current.value});

  for (const auto i : order) {
    if (i == seed) continue;
    selected.push_back(records[i]);
    const auto candidate = estimate_of(selected, options.mapping);
    // The tolerance stops rounding noise in the mean from counting as a change.
    const bool keep = options.strict_decrease ? candidate.value < current.value - kTieTolerance
                                              : candidate.value <= current.value + kTieTolerance;
    result.trace.push_back({records[i].format_id, keep ? TraceAction::kept : TraceAction::removed,
                            current.value, candidate.value});
    if (keep) {
      current = candidate;
    } else {
      selected.pop_back();
    }
  }

  for (const auto& r : selected) result.selected_format_ids.push_back(r.format_id);
  result.estimate = current;
  result.final_answer = final_vote(selected);
  return result;
}

BruteForceResult brute_force_select(std::span<const FormatRecord> records, std::size_t max_m,
                                    ensemble::ScoreMapping mapping) {
  check_records(records);
  if (records.size() > max_m) {
    throw Error(ErrorCode::size, "brute force over " + std::to_string(records.size()) +
                                     " records exceeds the cap of " + std::to_string(max_m));
  }
  if (max_m > 62) throw Error(ErrorCode::size, "brute-force cap too large");

  const auto m = records.size();
  BruteForceResult best;
  std::vector<std::string> best_sorted;
  bool have = false;
  std::vector<FormatRecord> subset;
  for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << m); ++mask) {
    subset.clear();
    for (std::size_t i = 0; i < m; ++i) {
      if (mask & (std::uint64_t{1} << i)) subset.push_back(records[i]);
    }
    const double value = estimate_of(subset, mapping).value;
    std::vector<std::string> ids;
    for (const auto& r : subset) ids.push_back(r.format_id);
    auto sorted = ids;
    std::sort(sorted.begin(), sorted.end());

    bool better = !have || value < best.best_value - kTieTolerance;
    if (!better && have && std::abs(value - best.best_value) <= kTieTolerance) {
      better = ids.size() < best.best_subset_ids.size() ||
               (ids.size() == best.best_subset_ids.size() && sorted < best_sorted);
    }
    if (better) {
      best.best_value = value;
      best.best_subset_ids = std::move(ids);
      best_sorted = std::move(sorted);
      have = true;
    }
  }
  return best;
}

void to_json(json& j, const SelectionResult& r) {
  json trace = json::array();
  for (const auto& t : r.trace) {
    trace.push_back({{"format_id", t.format_id},
                     {"action", t.action == TraceAction::kept ? "kept" : "removed"},
                     {"value_before", t.value_before},
                     {"value_after", t.value_after}});
  }
  j = json{{"question_id", r.question_id},
           {"selected_format_ids", r.selected_format_ids},
           {"estimate",
            {{"mean_error", r.estimate.mean_error},
             {"diversity", r.estimate.diversity},
             {"value", r.estimate.value},
             {"subset_size", r.estimate.subset_size}}},
           {"final_answer", r.final_answer.value()},
           {"trace", trace}};
}

void from_json(const json& j, SelectionResult& r) {
  r.question_id = j.at("question_id").get<std::string>();
  r.selected_format_ids = j.at("selected_format_ids").get<std::vector<std::string>>();
  const auto& e = j.at("estimate");
  r.estimate.mean_error = e.at("mean_error").get<double>();
  r.estimate.diversity = e.at("diversity").get<double>();
  r.estimate.value = e.at("value").get<double>();
  r.estimate.subset_size = e.at("subset_size").get<std::size_t>();
  r.final_answer = AnswerLabel(j.at("final_answer").get<std::string>());
  r.trace.clear();
  for (const auto& t : j.value("trace", json::array())) {
    const auto action = t.at("action").get<std::string>();
    if (action != "kept" && action != "removed") {
      throw Error(ErrorCode::validation, "unknown trace action '" + action + "'");
    }
    r.trace.push_back({t.at("format_id").get<std::string>(),
                       action == "kept" ? TraceAction::kept : TraceAction::removed,
                       t.at("value_before").get<double>(), t.at("value_after").get<double>()});
  }
  if (r.selected_format_ids.empty()) {
    throw Error(ErrorCode::validation, "selection for " + r.question_id + " selects nothing");
  }
}

}  // namespace format_adapter::select
