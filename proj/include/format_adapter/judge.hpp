#pragma once

// LLM-as-judge scoring: a 1-10 rating of each answer, scaled to [0,1].

#include <optional>
#include <string>
#include <string_view>

#include "format_adapter/pipeline.hpp"

namespace format_adapter::judge {

inline constexpr double kDefaultScore = 0.5;

struct ParsedScore {
  std::optional<int> value;  // 1..10
  bool clamped = false;      // the rating was out of range and pulled into 1..10
};

ParsedScore parse_score(std::string_view text);

struct ScoreRecord {
  std::string question_id;
  std::string format_id;
  std::string raw_judge_text;
  std::optional<int> raw_score;
  double score = kDefaultScore;
  bool defaulted = true;
  bool clamped = false;
};

void to_json(json& j, const ScoreRecord& r);
void from_json(const json& j, ScoreRecord& r);

// Builds the record from judge output.
ScoreRecord make_score_record(std::string question_id, std::string format_id,
                              std::string judge_text);

struct JudgeOptions {
  std::string model_id;
  pipeline::Decoding decoding;  // temperature 0 by default
  bool label_only = false;      // show the judge the extracted label instead of the full answer
};

// The judge never sees the gold answer.
ScoreRecord score_answer(const pipeline::StageClient& client, const std::string& question_id,
                         const std::string& format_id, const std::string& question,
                         const std::string& answer_text, const JudgeOptions& options);

}  // namespace format_adapter::judge
