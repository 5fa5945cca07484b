#pragma once

// Prompt templates for format generation, instruction rewriting, answering
// and judging. Bump kTemplateVersion whenever any wording changes: run
// directories record it and cached responses are keyed on the exact text.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "format_adapter/gateway.hpp"
#include "format_adapter/task.hpp"

namespace format_adapter::prompts {

inline constexpr std::string_view kTemplateVersion = "templates-v1";

// First line of each template's system message.
inline constexpr std::string_view kFormatGenerationHeader =
    "You design reasoning formats for solving a task.";
inline constexpr std::string_view kSupplementaryHeader =
    "You extend a list of reasoning formats for solving a task.";
inline constexpr std::string_view kRewriteHeader =
    "You rewrite task instructions so that answers follow a given reasoning format.";
inline constexpr std::string_view kJudgeHeader =
    "Please act as an impartial judge and evaluate whether the response";

// Line prefix naming the format in rewrite prompts (and in the simulated
// backend's rewritten instructions and answers).
inline constexpr std::string_view kFormatMarker = "Reasoning format: ";

std::vector<llm::ChatMessage> format_generation_messages(const TaskSpec& task, std::size_t count);
std::vector<llm::ChatMessage> supplementary_format_messages(
    const TaskSpec& task, const std::vector<ReasoningFormat>& existing, std::size_t count);
std::vector<llm::ChatMessage> rewrite_messages(const std::string& original_instruction,
                                               const ReasoningFormat& format);
std::vector<llm::ChatMessage> answer_messages(const std::string& instruction,
                                              const std::string& question);
std::vector<llm::ChatMessage> judge_messages(const std::string& question,
                                             const std::string& answer);

// Inverse helpers for backends that interpret the templates.
std::optional<std::size_t> requested_format_count(std::string_view user_message);
std::vector<std::string> listed_format_names(std::string_view user_message);

struct RewriteFields {
  std::string original_instruction;
  std::string format_name;
  std::string format_description;
};
std::optional<RewriteFields> parse_rewrite_prompt(std::string_view user_message);

struct JudgeFields {
  std::string question;
  std::string answer;
};
std::optional<JudgeFields> parse_judge_prompt(std::string_view user_message);

// Name following the first kFormatMarker line in `text`, if any.
std::optional<std::string> find_format_marker(std::string_view text);

}  // namespace format_adapter::prompts
