#include "format_adapter/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "format_adapter/artifacts.hpp"
#include "format_adapter/error.hpp"
#include "format_adapter/util.hpp"

namespace format_adapter::eval {

using select::FormatRecord;
using select::SelectionResult;

std::map<std::string, std::vector<FormatRecord>> group_by_question(
    std::span<const FormatRecord> records) {
  std::map<std::string, std::vector<FormatRecord>> out;
  for (const auto& r : records) out[r.question_id].push_back(r);
  return out;
}

namespace {

std::string id_list(const std::vector<std::string>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size() && i < 20; ++i) out += (i ? ", " : "") + ids[i];
  if (ids.size() > 20) out += ", ... (" + std::to_string(ids.size()) + " total)";
  return out;
}

std::map<std::string, const SelectionResult*> index_selections(
    std::span<const SelectionResult> selections) {
  std::map<std::string, const SelectionResult*> out;
  for (const auto& s : selections) out[s.question_id] = &s;
  return out;
}

void require_coverage(const Dataset& dataset,
                      const std::map<std::string, std::vector<FormatRecord>>& by_question,
                      const std::map<std::string, const SelectionResult*>* selections) {
  if (dataset.empty()) throw Error(ErrorCode::incomplete_run, "dataset has no questions");
  std::vector<std::string> missing;
  for (const auto& q : dataset) {
    const bool has_records = by_question.count(q.id) > 0;
    const bool has_selection = !selections || selections->count(q.id) > 0;
    if (!has_records || !has_selection) missing.push_back(q.id);
  }
  if (!missing.empty()) {
    throw Error(ErrorCode::incomplete_run, "run has no results for " +
                                               std::to_string(missing.size()) +
                                               " questions: " + id_list(missing));
  }
}

double percent(std::size_t hits, std::size_t total) {
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(hits) / static_cast<double>(total);
}

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double average = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = average;
    i = j + 1;
  }
  return r;
}

json usage_without_times(const llm::UsageReport& usage) {
  json j = usage;
  j.erase("wall_time_per_stage");
  if (j.contains("per_stage")) {
    for (auto& [_, stage] : j["per_stage"].items()) stage.erase("seconds");
  }
  return j;
}

}  // namespace

double vote_em_of(const Dataset& dataset,
                  const std::map<std::string, std::vector<FormatRecord>>& by_question) {
  std::size_t hits = 0;
  for (const auto& q : dataset) {
    const auto it = by_question.find(q.id);
    if (it == by_question.end() || it->second.empty()) continue;
    hits += exact_match(select::final_vote(it->second), q.gold);
  }
  return percent(hits, dataset.size());
}

double score_quality(std::span<const FormatRecord> records, const Dataset& dataset) {
  if (records.empty()) throw Error(ErrorCode::empty_set, "no records to assess score quality");
  std::map<std::string, const DatasetRecord*> gold;
  for (const auto& q : dataset) gold[q.id] = &q;
  double total = 0.0;
  for (const auto& r : records) {
    const auto it = gold.find(r.question_id);
    if (it == gold.end()) {
      throw Error(ErrorCode::not_found, "no gold answer for question " + r.question_id);
    }
    // Percent per record first: 100 - 80 is exact where (1 - 0.8) * 100 is not.
    const double pct = r.score * 100.0;
    total += exact_match(r.answer, it->second->gold) ? pct : 100.0 - pct;
  }
  return total / static_cast<double>(records.size());
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::validation, "series lengths differ");
  if (x.size() < 2) throw Error(ErrorCode::precondition, "correlation needs at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) {
    throw Error(ErrorCode::undefined_correlation, "a series has zero variance");
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  return pearson(rx, ry);
}

Correlation estimator_correlation(std::span<const CorrelationPoint> points) {
  if (points.size() < 3) {
    throw Error(ErrorCode::precondition, "correlation needs at least 3 subset runs, got " +
                                             std::to_string(points.size()));
  }
  std::vector<double> x;
  std::vector<double> y;
  for (const auto& p : points) {
    x.push_back(p.estimator);
    y.push_back(p.vote_em);
  }
  return {pearson(x, y), spearman(x, y)};
}

RunMetrics evaluate(const Dataset& dataset, std::span<const FormatRecord> records,
                    std::span<const SelectionResult> selections) {
  const auto by_question = group_by_question(records);
  const auto selection_of = index_selections(selections);
  require_coverage(dataset, by_question, &selection_of);

  RunMetrics m;
  m.n_questions = dataset.size();
  std::size_t vote_hits = 0;
  std::size_t oracle_hits = 0;
  std::size_t oracle_selected_hits = 0;
  double distinct_total = 0.0;
  std::vector<FormatRecord> evaluated;
  std::vector<double> estimates;
  std::vector<double> correct;

  for (const auto& q : dataset) {
    const auto& recs = by_question.at(q.id);
    const auto& sel = *selection_of.at(q.id);
    const std::set<std::string> selected(sel.selected_format_ids.begin(),
                                         sel.selected_format_ids.end());
    std::set<std::string> distinct;
    bool any = false;
    bool any_selected = false;
    for (const auto& r : recs) {
      distinct.insert(r.answer.value());
      const bool hit = exact_match(r.answer, q.gold);
      any |= hit;
      any_selected |= hit && selected.count(r.format_id) > 0;
      m.no_answer_records += r.answer.is_no_answer();
      evaluated.push_back(r);
    }
    const bool vote_hit = exact_match(sel.final_answer, q.gold);
    vote_hits += vote_hit;
    oracle_hits += any;
    oracle_selected_hits += any_selected;
    distinct_total += static_cast<double>(distinct.size());
    estimates.push_back(sel.estimate.value);
    correct.push_back(vote_hit ? 1.0 : 0.0);
  }

  m.n_records = evaluated.size();
  m.vote_em = percent(vote_hits, dataset.size());
  m.oracle_em = percent(oracle_hits, dataset.size());
  m.oracle_selected_em = percent(oracle_selected_hits, dataset.size());
  m.avg_distinct_answers = distinct_total / static_cast<double>(dataset.size());
  m.score_quality = score_quality(evaluated, dataset);
  if (estimates.size() >= 3) {
    try {
      m.estimator_correlation = pearson(estimates, correct);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::undefined_correlation) throw;
    }
  }
  return m;
}

RunMetrics evaluate_run(const std::filesystem::path& run_dir, const Dataset& dataset) {
  namespace a = artifacts;
  const auto answers = a::load_answers(run_dir / a::kAnswersFile);
  const auto scores = a::load_scores(run_dir / a::kScoresFile);
  const auto selections = a::load_selection(run_dir / a::kSelectionFile);
  const auto records = a::join_records(answers, scores);
  auto metrics = evaluate(dataset, records, selections);
  if (std::filesystem::exists(run_dir / a::kUsageFile)) {
    metrics.usage = a::load_usage(run_dir / a::kUsageFile);
  }
  return metrics;
}

std::vector<CorrelationPoint> subset_correlation_points(std::span<const FormatRecord> records,
                                                        const Dataset& dataset,
                                                        std::size_t subsets, std::uint64_t seed,
                                                        ensemble::ScoreMapping mapping) {
  const auto by_question = group_by_question(records);
  require_coverage(dataset, by_question, nullptr);
  std::vector<std::string> formats;
  for (const auto& r : records) {
    if (std::find(formats.begin(), formats.end(), r.format_id) == formats.end()) {
      formats.push_back(r.format_id);
    }
  }

  std::mt19937_64 rng(seed);
  std::vector<CorrelationPoint> points;
  for (std::size_t s = 0; s < subsets; ++s) {
    auto pool = formats;
    const auto size = 1 + uniform_index(rng, pool.size());
    for (std::size_t i = 0; i < size; ++i) {
      std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
    }
    pool.resize(size);
    const std::set<std::string> chosen(pool.begin(), pool.end());

    CorrelationPoint point;
    point.format_ids = pool;
    double estimate_total = 0.0;
    std::size_t counted = 0;
    std::size_t hits = 0;
    for (const auto& q : dataset) {
      std::vector<FormatRecord> subset;
      for (const auto& r : by_question.at(q.id)) {
        if (chosen.count(r.format_id)) subset.push_back(r);
      }
      if (subset.empty()) continue;
      estimate_total += select::estimate_of(subset, mapping).value;
      ++counted;
      hits += exact_match(select::final_vote(subset), q.gold);
    }
    point.estimator = counted ? estimate_total / static_cast<double>(counted) : 0.0;
    point.vote_em = percent(hits, dataset.size());
    points.push_back(std::move(point));
  }
  return points;
}

AllVsSelected compare_all_vs_selected(std::span<const FormatRecord> records,
                                      std::span<const SelectionResult> selections,
                                      const Dataset& dataset) {
  const auto by_question = group_by_question(records);
  const auto selection_of = index_selections(selections);
  require_coverage(dataset, by_question, &selection_of);
  std::size_t selected_hits = 0;
  for (const auto& q : dataset) selected_hits += exact_match(selection_of.at(q.id)->final_answer, q.gold);
  AllVsSelected out;
  out.all_vote_em = vote_em_of(dataset, by_question);
  out.selected_vote_em = percent(selected_hits, dataset.size());
  out.delta = out.selected_vote_em - out.all_vote_em;
  return out;
}

RobustnessReport aggregate_robustness(std::vector<SeedOutcome> outcomes) {
  if (outcomes.size() < 2) {
    throw Error(ErrorCode::precondition, "robustness needs at least two seeds");
  }
  RobustnessReport r;
  std::vector<double> values;
  for (const auto& o : outcomes) {
    if (o.vote_em) {
      values.push_back(*o.vote_em);
    } else {
      r.failed_seeds.push_back(o.seed);
    }
  }
  r.per_seed = std::move(outcomes);
  if (values.empty()) return r;
  const double n = static_cast<double>(values.size());
  r.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  r.min = *std::min_element(values.begin(), values.end());
  r.max = *std::max_element(values.begin(), values.end());
  if (values.size() > 1) {
    double ss = 0.0;
    for (const double v : values) ss += (v - r.mean) * (v - r.mean);
    r.stddev = std::sqrt(ss / (n - 1.0));
  }
  return r;
}

void to_json(json& j, const RunMetrics& m) {
  j = json{{"vote_em", m.vote_em},
           {"oracle_em", m.oracle_em},
           {"oracle_selected_em", m.oracle_selected_em},
           {"n_questions", m.n_questions},
           {"n_records", m.n_records},
           {"no_answer_records", m.no_answer_records},
           {"avg_distinct_answers", m.avg_distinct_answers}};
  j["score_quality"] = m.score_quality ? json(*m.score_quality) : json(nullptr);
  j["estimator_correlation"] =
      m.estimator_correlation ? json(*m.estimator_correlation) : json(nullptr);
  j["usage"] = m.usage ? usage_without_times(*m.usage) : json(nullptr);
}

void from_json(const json& j, RunMetrics& m) {
  m.vote_em = j.at("vote_em").get<double>();
  m.oracle_em = j.at("oracle_em").get<double>();
  m.oracle_selected_em = j.value("oracle_selected_em", 0.0);
  m.n_questions = j.at("n_questions").get<std::size_t>();
  m.n_records = j.value("n_records", std::size_t{0});
  m.no_answer_records = j.value("no_answer_records", std::size_t{0});
  m.avg_distinct_answers = j.value("avg_distinct_answers", 0.0);
  m.score_quality.reset();
  m.estimator_correlation.reset();
  m.usage.reset();
  if (j.contains("score_quality") && !j["score_quality"].is_null()) {
    m.score_quality = j["score_quality"].get<double>();
  }
  if (j.contains("estimator_correlation") && !j["estimator_correlation"].is_null()) {
    m.estimator_correlation = j["estimator_correlation"].get<double>();
  }
  if (j.contains("usage") && !j["usage"].is_null()) m.usage = j["usage"].get<llm::UsageReport>();
}

void to_json(json& j, const Correlation& c) {
  j = json{{"pearson", c.pearson}, {"spearman", c.spearman}};
}

void to_json(json& j, const CorrelationPoint& p) {
  j = json{{"estimator", p.estimator}, {"vote_em", p.vote_em}, {"format_ids", p.format_ids}};
}

void to_json(json& j, const AllVsSelected& a) {
  j = json{{"all_vote_em", a.all_vote_em},
           {"selected_vote_em", a.selected_vote_em},
           {"delta", a.delta}};
}

void to_json(json& j, const RobustnessReport& r) {
  json seeds = json::array();
  for (const auto& o : r.per_seed) {
    seeds.push_back({{"seed", o.seed},
                     {"vote_em", o.vote_em ? json(*o.vote_em) : json(nullptr)},
                     {"error", o.error}});
  }
  j = json{{"per_seed", seeds}, {"mean", r.mean},       {"stddev", r.stddev},
           {"min", r.min},      {"max", r.max},         {"failed_seeds", r.failed_seeds}};
}

}  // namespace format_adapter::eval
