#pragma once

// Deterministic stand-in for a chat model. It understands the prompt
// templates: format-generation prompts get an outline built from the
// profile's format list, rewrite prompts get the original instruction
// tagged with the format name, answer prompts get an answer label drawn
// from the (format, question) distribution, and judge prompts get a rating
// drawn from the matching score distribution.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "format_adapter/gateway.hpp"
#include "format_adapter/task.hpp"

namespace format_adapter::sim {

// Profile key for answers produced without a reasoning format (original
// instruction, e.g. self-consistency sampling).
inline constexpr std::string_view kOriginalFormat = "original";

struct LabelProbability {
  std::string label;
  double p = 0.0;
};

struct ScoreProbability {
  int score = 5;  // judge rating, 1..10
  double p = 0.0;
};

struct Distribution {
  std::vector<LabelProbability> answers;
  std::vector<ScoreProbability> scores;
};

struct SimFormat {
  std::string category;
  std::string name;
  std::string description;
};

enum class RewriteStyle {
  tagged,    // prefix the original instruction with the format marker line
  identity,  // echo the original instruction unchanged
};

struct SimProfile {
  Distribution defaults;
  // (format name, question id) -> distributions. Missing answers or scores
  // fall back to `defaults`.
  std::map<std::pair<std::string, std::string>, Distribution> entries;
  std::vector<SimFormat> formats;
  std::uint64_t seed = 0;
  RewriteStyle rewrite = RewriteStyle::tagged;

  // Probabilities must sum to 1 within 1e-9 and scores lie in 1..10.
  void validate() const;
  const std::vector<LabelProbability>& answers_for(const std::string& format,
                                                   const std::string& question_id) const;
  const std::vector<ScoreProbability>& scores_for(const std::string& format,
                                                  const std::string& question_id) const;
  // Declared formats, or the distinct entry format names when none are declared.
  std::vector<SimFormat> effective_formats() const;
};

void to_json(json& j, const SimProfile& p);
void from_json(const json& j, SimProfile& p);
SimProfile load_sim_profile(const std::filesystem::path& path);

// Maps rendered question text back to dataset ids.
using QuestionIndex = std::map<std::string, std::string>;
QuestionIndex make_question_index(const Dataset& dataset);

// Output is a pure function of (profile, request): identical inputs give
// byte-identical text in every process.
class SimulatedBackend : public llm::Backend {
 public:
  SimulatedBackend(SimProfile profile, QuestionIndex questions);

  llm::ChatResponse send(const llm::ChatRequest& request) override;
  llm::BackendKind kind() const override { return llm::BackendKind::simulated; }

  const SimProfile& profile() const noexcept { return profile_; }

 private:
  std::string format_listing(const std::string& user, bool supplementary) const;
  std::string rewrite(const std::string& user) const;
  std::string answer(const llm::ChatRequest& request, std::mt19937_64& rng) const;
  std::string judge(const std::string& user, std::mt19937_64& rng) const;
  std::string question_id(const std::string& rendered) const;

  SimProfile profile_;
  QuestionIndex questions_;
};

// Compact description of a synthetic benchmark, expanded by
// expand_scenario() into a dataset, a task and a SimProfile.
struct ScenarioFormat {
  std::string category = "General";
  std::string name;
  std::string description;
  double accuracy = 0.5;          // chance the format's modal answer is gold
  bool systematic_error = false;  // wrong answers collapse onto one shared label
  double answer_noise = 0.0;      // probability mass moved off the modal answer
  int score_if_correct = 8;       // centre of the judge rating distribution
  int score_if_wrong = 4;
  int score_spread = 1;           // ratings uniform on centre +/- spread
};

struct Scenario {
  std::uint64_t seed = 1;
  std::size_t questions = 20;
  AnswerKind answer_kind = AnswerKind::numeric;
  std::size_t wrong_labels = 4;  // distinct wrong answers available per question
  std::vector<ScenarioFormat> formats;
  std::optional<ScenarioFormat> original;  // behaviour without a format
  std::optional<TaskSpec> task;
};

void from_json(const json& j, ScenarioFormat& f);
void from_json(const json& j, Scenario& s);
Scenario load_scenario(const std::filesystem::path& path);

struct ScenarioBundle {
  TaskSpec task;
  Dataset dataset;
  SimProfile profile;
};

// Expands a scenario. When `questions` is given its items (and golds) are
// used instead of synthetic ones.
ScenarioBundle expand_scenario(const Scenario& scenario,
                               const std::optional<Dataset>& questions = std::nullopt);

}  // namespace format_adapter::sim
