#include "format_adapter/ensemble_math.hpp"

#include <cmath>
#include <random>
#include <string>

#include "format_adapter/error.hpp"
#include "format_adapter/util.hpp"

namespace format_adapter::ensemble {

AnswerLabel::AnswerLabel(std::string value) : value_(std::move(value)) {
  if (value_.empty()) {
    throw Error(ErrorCode::validation, "answer label must be non-empty");
  }
}

bool AnswerLabel::is_no_answer() const noexcept { return value_ == kNoAnswer; }

AnswerLabel no_answer() { return AnswerLabel(std::string(kNoAnswer)); }

int zero_one_loss(const AnswerLabel& x, const AnswerLabel& y) { return x == y ? 0 : 1; }

AnswerLabel plurality(std::span<const AnswerLabel> answers, std::span<const double> tie_scores) {
  if (answers.empty()) {
    throw Error(ErrorCode::empty_set, "plurality over an empty answer list");
  }
  if (tie_scores.size() != answers.size()) {
    throw Error(ErrorCode::validation, "plurality: tie_scores length differs from answers");
  }

  // Distinct labels in first-occurrence order. Inputs are small (one entry
  // per format), so a linear scan beats hashing.
  struct Tally {
    std::size_t first_index;
    std::size_t count;
    double score_sum;
  };
  std::vector<Tally> tallies;
  for (std::size_t i = 0; i < answers.size(); ++i) {
    bool found = false;
    for (auto& t : tallies) {
      if (answers[t.first_index] == answers[i]) {
        ++t.count;
        t.score_sum += tie_scores[i];
        found = true;
        break;
      }
    }
    if (!found) tallies.push_back({i, 1, tie_scores[i]});
  }

  const Tally* best = &tallies.front();
  for (const auto& t : tallies) {
    if (t.count > best->count || (t.count == best->count && t.score_sum > best->score_sum)) {
      best = &t;
    }
  }
  return answers[best->first_index];
}

DecompositionReport decomposition_sides(std::span<const AnswerLabel> predictions,
                                        const AnswerLabel& gold, LossKind loss,
                                        CombinerKind combiner) {
  if (loss != LossKind::zero_one || combiner != CombinerKind::plurality_mode) {
    throw Error(ErrorCode::config,
                "label predictions require zero_one loss with the plurality_mode combiner");
  }
  if (predictions.empty()) {
    throw Error(ErrorCode::empty_set, "decomposition over an empty prediction list");
  }
  const std::vector<double> no_scores(predictions.size(), 0.0);
  const AnswerLabel combined = plurality(predictions, no_scores);

  const double m = static_cast<double>(predictions.size());
  double individual = 0.0;
  double diversity = 0.0;
  for (const auto& p : predictions) {
    individual += zero_one_loss(p, gold);
    diversity += zero_one_loss(p, combined);
  }

  DecompositionReport report;
  report.loss_kind = loss;
  report.combiner_kind = combiner;
  report.lhs = zero_one_loss(combined, gold);
  report.avg_individual_loss = individual / m;
  report.diversity_term = diversity / m;
  report.residual = report.lhs - (report.avg_individual_loss - report.diversity_term);
  return report;
}

DecompositionReport decomposition_sides(std::span<const double> predictions, double gold,
                                        LossKind loss, CombinerKind combiner) {
  if (loss != LossKind::squared || combiner != CombinerKind::arithmetic_mean) {
    throw Error(ErrorCode::config,
                "real-valued predictions require squared loss with the arithmetic_mean combiner");
  }
  if (predictions.empty()) {
    throw Error(ErrorCode::empty_set, "decomposition over an empty prediction list");
  }
  const double m = static_cast<double>(predictions.size());
  double sum = 0.0;
  for (double p : predictions) sum += p;
  const double combined = sum / m;

  double individual = 0.0;
  double diversity = 0.0;
  for (double p : predictions) {
    individual += (p - gold) * (p - gold);
    diversity += (p - combined) * (p - combined);
  }

  DecompositionReport report;
  report.loss_kind = loss;
  report.combiner_kind = combiner;
  report.lhs = (combined - gold) * (combined - gold);
  report.avg_individual_loss = individual / m;
  report.diversity_term = diversity / m;
  report.residual = report.lhs - (report.avg_individual_loss - report.diversity_term);
  return report;
}

ErrorEstimate format_error_estimate(std::span<const ScoredAnswer> records, ScoreMapping mapping) {
  if (records.empty()) {
    throw Error(ErrorCode::empty_set, "error estimate over an empty record set");
  }
  std::vector<AnswerLabel> answers;
  std::vector<double> scores;
  answers.reserve(records.size());
  scores.reserve(records.size());
  double error_sum = 0.0;
  for (const auto& r : records) {
    if (!(r.score >= 0.0 && r.score <= 1.0)) {
      throw Error(ErrorCode::validation,
                  "score " + std::to_string(r.score) + " outside [0,1]");
    }
    error_sum += mapping == ScoreMapping::one_minus_score ? 1.0 - r.score : r.score;
    answers.push_back(r.answer);
    scores.push_back(r.score);
  }
  const AnswerLabel consensus = plurality(answers, scores);
  std::size_t disagreeing = 0;
  for (const auto& a : answers) disagreeing += static_cast<std::size_t>(zero_one_loss(a, consensus));

  const double n = static_cast<double>(records.size());
  ErrorEstimate estimate;
  estimate.subset_size = records.size();
  estimate.mean_error = error_sum / n;
  estimate.diversity = static_cast<double>(disagreeing) / n;
  estimate.value = estimate.mean_error - estimate.diversity;
  return estimate;
}

namespace {

void validate(const PerturbationConfig& c) {
  auto is_probability = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!is_probability(c.base_error_rate) || !is_probability(c.perturbation_scale)) {
    throw Error(ErrorCode::config, "perturbation config: probabilities must lie in [0,1]");
  }
  if (c.predictors < 1 || c.trials < 1) {
    throw Error(ErrorCode::config, "perturbation config: predictors and trials must be >= 1");
  }
  if (c.alphabet_size < 2) {
    throw Error(ErrorCode::config, "perturbation config: alphabet needs at least two labels");
  }
}

// Plurality over m perturbed copies of `base`; returns whether the vote
// lands on `gold`.
bool vote_is_correct(std::size_t base, std::size_t gold, const PerturbationConfig& c,
                     std::mt19937_64& rng, const std::vector<AnswerLabel>& alphabet,
                     std::vector<AnswerLabel>& votes, const std::vector<double>& no_scores) {
  votes.clear();
  for (std::size_t i = 0; i < c.predictors; ++i) {
    std::size_t label = base;
    if (unit_uniform(rng) < c.perturbation_scale) {
      // Uniform over the labels other than the unperturbed answer.
      label = uniform_index(rng, c.alphabet_size - 1);
      if (label >= base) ++label;
    }
    votes.push_back(alphabet[label]);
  }
  return plurality(votes, no_scores) == alphabet[gold];
}

}  // namespace

LimitExperimentResult single_format_limit_experiment(const PerturbationConfig& config) {
  validate(config);

  std::vector<AnswerLabel> alphabet;
  for (std::size_t i = 0; i < config.alphabet_size; ++i) {
    alphabet.emplace_back("L" + std::to_string(i));
  }
  const std::vector<double> no_scores(config.predictors, 0.0);
  std::vector<AnswerLabel> votes;
  votes.reserve(config.predictors);

  // Stratified over the synthetic dataset: questions the unperturbed
  // predictor gets right (answer = gold = L0) and wrong (answer = L1), each
  // stratum weighted by its share of the dataset. The estimate therefore
  // equals base_error_rate exactly when no perturbation is applied.
  std::mt19937_64 rng(config.seed);
  std::size_t wrong_when_base_right = 0;
  std::size_t wrong_when_base_wrong = 0;
  for (std::size_t t = 0; t < config.trials; ++t) {
    if (!vote_is_correct(0, 0, config, rng, alphabet, votes, no_scores)) ++wrong_when_base_right;
    if (!vote_is_correct(1, 0, config, rng, alphabet, votes, no_scores)) ++wrong_when_base_wrong;
  }

  const double trials = static_cast<double>(config.trials);
  LimitExperimentResult result;
  result.base_error = config.base_error_rate;
  result.ensemble_error =
      config.base_error_rate * (static_cast<double>(wrong_when_base_wrong) / trials) +
      (1.0 - config.base_error_rate) * (static_cast<double>(wrong_when_base_right) / trials);
  result.gap = std::abs(result.ensemble_error - result.base_error);
  return result;
}

}  // namespace format_adapter::ensemble
