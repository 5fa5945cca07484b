#pragma once

// Loss, ensemble-error decomposition and the multi-format error estimator
// used by answer selection. Everything here is a pure function.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace format_adapter::ensemble {

// A normalized answer. Equality is plain string equality.
class AnswerLabel {
 public:
  AnswerLabel() = default;
  explicit AnswerLabel(std::string value);

  const std::string& value() const noexcept { return value_; }
  bool is_no_answer() const noexcept;

  friend bool operator==(const AnswerLabel&, const AnswerLabel&) = default;
  friend auto operator<=>(const AnswerLabel&, const AnswerLabel&) = default;

 private:
  std::string value_;
};

// Label given to outputs with no extractable answer. Votes like any other
// label but never matches gold.
inline constexpr std::string_view kNoAnswer = "<no-answer>";
AnswerLabel no_answer();

// 0 when the labels are identical, 1 otherwise.
int zero_one_loss(const AnswerLabel& x, const AnswerLabel& y);

// Most frequent label. Frequency ties go to the highest summed tie score,
// remaining ties to the earliest occurrence.
AnswerLabel plurality(std::span<const AnswerLabel> answers, std::span<const double> tie_scores);

enum class LossKind { zero_one, squared };
enum class CombinerKind { plurality_mode, arithmetic_mean };

struct DecompositionReport {
  double lhs = 0.0;                  // L(combined, gold)
  double avg_individual_loss = 0.0;  // (1/m) sum L(p_i, gold)
  double diversity_term = 0.0;       // (1/m) sum L(p_i, combined)
  double residual = 0.0;             // lhs - (avg_individual_loss - diversity_term)
  LossKind loss_kind = LossKind::zero_one;
  CombinerKind combiner_kind = CombinerKind::plurality_mode;
};

// Both sides of the ensemble-error decomposition for one example. The label
// overload accepts only zero_one/plurality_mode and the real overload only
// squared/arithmetic_mean; anything else is a configuration error. The
// decomposition is an identity only in the squared/mean case, so the
// residual is reported rather than assumed zero.
DecompositionReport decomposition_sides(std::span<const AnswerLabel> predictions,
                                        const AnswerLabel& gold, LossKind loss,
                                        CombinerKind combiner);
DecompositionReport decomposition_sides(std::span<const double> predictions, double gold,
                                        LossKind loss, CombinerKind combiner);

struct ScoredAnswer {
  AnswerLabel answer;
  double score = 0.0;  // judge estimate of P(correct), in [0,1]
};

// How judge scores enter the mean-error term.
enum class ScoreMapping {
  one_minus_score,  // error estimate is 1 - score (default)
  raw_score,        // average the raw scores
};

struct ErrorEstimate {
  double mean_error = 0.0;
  double diversity = 0.0;
  double value = 0.0;  // mean_error - diversity
  std::size_t subset_size = 0;
};

// Empirical multi-format error: mean estimated error of the records minus
// the fraction of records disagreeing with their plurality answer.
ErrorEstimate format_error_estimate(std::span<const ScoredAnswer> records,
                                    ScoreMapping mapping = ScoreMapping::one_minus_score);

struct PerturbationConfig {
  double base_error_rate = 0.0;
  double perturbation_scale = 0.0;  // probability a predictor's answer is flipped
  std::size_t predictors = 1;
  std::size_t trials = 1;
  std::uint64_t seed = 0;
  std::size_t alphabet_size = 4;
};

struct LimitExperimentResult {
  double ensemble_error = 0.0;
  double base_error = 0.0;
  double gap = 0.0;
};

// Monte-Carlo check that voting over perturbed copies of one predictor
// converges to that predictor's own error as the perturbation vanishes.
LimitExperimentResult single_format_limit_experiment(const PerturbationConfig& config);

}  // namespace format_adapter::ensemble
