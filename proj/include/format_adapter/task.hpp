#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "format_adapter/ensemble_math.hpp"
#include "json.hpp"

namespace format_adapter {

using json = nlohmann::json;

enum class AnswerKind { numeric, multiple_choice, free_text };

std::string_view to_string(AnswerKind kind);
AnswerKind answer_kind_from_string(std::string_view s);

struct TaskSpec {
  std::string name;
  std::string definition;
  std::string example_question;
  std::string example_answer;
  std::string original_instruction;
  AnswerKind answer_kind = AnswerKind::numeric;

  void validate() const;
};

void to_json(json& j, const TaskSpec& t);
void from_json(const json& j, TaskSpec& t);
TaskSpec load_task(const std::filesystem::path& path);

struct ReasoningFormat {
  std::string id;  // slug of category and name
  std::string category;
  std::string name;
  std::string description;
  std::optional<std::string> rewritten_instruction;
};

// Stable id for a (category, name) pair: lower-cased ASCII alphanumerics
// joined by '-', category and name separated by "--".
std::string format_id(std::string_view category, std::string_view name);

struct FormatSet {
  std::string task_name;
  std::vector<ReasoningFormat> formats;
  std::string generation_model;

  // No duplicate ids, at least one format, non-empty category and name.
  void validate() const;
  const ReasoningFormat* find(std::string_view id) const;
};

void to_json(json& j, const ReasoningFormat& f);
void from_json(const json& j, ReasoningFormat& f);
void to_json(json& j, const FormatSet& s);
void from_json(const json& j, FormatSet& s);

// One dataset line: {id, question, answer, choices?}. `gold` is normalized
// for the task's answer kind at load time.
struct DatasetRecord {
  std::string id;
  std::string question;
  ensemble::AnswerLabel gold;
  std::optional<std::vector<std::string>> choices;
};

using Dataset = std::vector<DatasetRecord>;

Dataset parse_dataset(std::string_view jsonl, AnswerKind kind);
Dataset load_dataset(const std::filesystem::path& path, AnswerKind kind);
std::string dataset_to_jsonl(const Dataset& dataset);

// Question text as shown to the answering model: the question followed by
// lettered options for multiple-choice items.
std::string render_question(const DatasetRecord& record);

}  // namespace format_adapter
