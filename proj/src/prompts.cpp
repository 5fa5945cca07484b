#include "format_adapter/prompts.hpp"

#include <regex>

#include "format_adapter/util.hpp"

namespace format_adapter::prompts {

using llm::ChatMessage;
using llm::Role;

namespace {

constexpr std::string_view kOutlineRules = R"(
A reasoning format is a way of thinking or writing while solving a problem: a natural language, a formal notation, a programming language, a level of explanation, and so on. Group related formats into categories, and give every category several formats. The formats must be relevant to the task and varied enough that different questions can each find a suitable one.

Reply with a numbered outline and nothing else, using exactly this layout:
1. Category: <category name>
   - Format: <format name> — <one-sentence description>
   - Format: <format name> — <one-sentence description>
2. Category: <category name>
   - Format: <format name> — <one-sentence description>)";

std::string task_block(const TaskSpec& task) {
  return "Task definition:\n" + task.definition + "\n\nExample question:\n" +
         task.example_question + "\n\nExample answer:\n" + task.example_answer + "\n\n";
}

constexpr std::string_view kListedHeader = "Formats already listed:\n";
constexpr std::string_view kOriginalHeader = "Original instruction:\n";
constexpr std::string_view kDescriptionPrefix = "Format description: ";
constexpr std::string_view kCategoryPrefix = "Format category: ";
constexpr std::string_view kQuestionHeader = "[Question]\n";
constexpr std::string_view kAnswerStart = "[The Start of Assistant's Answer]\n";
constexpr std::string_view kAnswerEnd = "\n[The End of Assistant's Answer]";

}  // namespace

std::vector<ChatMessage> format_generation_messages(const TaskSpec& task, std::size_t count) {
  return {
      {Role::system, std::string(kFormatGenerationHeader) + std::string(kOutlineRules)},
      {Role::user, task_block(task) + "Generate " + std::to_string(count) +
                       " reasoning formats for this task."},
  };
}

std::vector<ChatMessage> supplementary_format_messages(
    const TaskSpec& task, const std::vector<ReasoningFormat>& existing, std::size_t count) {
  std::string listed;
  for (const auto& f : existing) listed += "- " + f.category + " / " + f.name + "\n";
  return {
      {Role::system, std::string(kSupplementaryHeader) + std::string(kOutlineRules)},
      {Role::user, task_block(task) + std::string(kListedHeader) + listed + "\nGenerate " +
                       std::to_string(count) +
                       " more reasoning formats for this task. Do not repeat any listed format."},
  };
}

std::vector<ChatMessage> rewrite_messages(const std::string& original_instruction,
                                          const ReasoningFormat& format) {
  return {
      {Role::system,
       std::string(kRewriteHeader) +
           "\nKeep every requirement of the original instruction, including how the final "
           "answer must be stated, and add what is needed so that the reasoning is carried out "
           "in the given format. Reply with the rewritten instruction only."},
      {Role::user, std::string(kOriginalHeader) + original_instruction + "\n\n" +
                       std::string(kFormatMarker) + format.name + "\n" +
                       std::string(kCategoryPrefix) + format.category + "\n" +
                       std::string(kDescriptionPrefix) + format.description},
  };
}

std::vector<ChatMessage> answer_messages(const std::string& instruction,
                                         const std::string& question) {
  return {{Role::system, instruction}, {Role::user, question}};
}

std::vector<ChatMessage> judge_messages(const std::string& question, const std::string& answer) {
  return {
      {Role::system,
       std::string(kJudgeHeader) +
           " provided by an AI assistant to the user question displayed below is correct. "
           "Consider both the reasoning and the final answer. Begin your evaluation with a short "
           "explanation. After providing your explanation, rate how likely it is that the answer "
           "is correct on a scale of 1 to 10 by strictly following this format: \"Rating: "
           "[[5]]\"."},
      {Role::user, std::string(kQuestionHeader) + question + "\n\n" + std::string(kAnswerStart) +
                       answer + std::string(kAnswerEnd)},
  };
}

std::optional<std::size_t> requested_format_count(std::string_view user_message) {
  static const std::regex pattern(R"(Generate (\d+) (?:more )?reasoning formats)");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_search(user_message.begin(), user_message.end(), m, pattern)) {
    return std::nullopt;
  }
  return static_cast<std::size_t>(std::stoul(m[1].str()));
}

std::vector<std::string> listed_format_names(std::string_view user_message) {
  std::vector<std::string> names;
  const auto start = user_message.find(kListedHeader);
  if (start == std::string_view::npos) return names;
  for (const auto& line : split_lines(user_message.substr(start + kListedHeader.size()))) {
    if (line.rfind("- ", 0) != 0) break;
    const auto slash = line.find(" / ");
    names.push_back(slash == std::string::npos ? line.substr(2) : line.substr(slash + 3));
  }
  return names;
}

std::optional<RewriteFields> parse_rewrite_prompt(std::string_view user_message) {
  if (user_message.rfind(kOriginalHeader, 0) != 0) return std::nullopt;
  const auto marker = user_message.rfind(std::string("\n\n") + std::string(kFormatMarker));
  if (marker == std::string_view::npos) return std::nullopt;
  RewriteFields fields;
  fields.original_instruction =
      std::string(user_message.substr(kOriginalHeader.size(), marker - kOriginalHeader.size()));
  for (const auto& line : split_lines(user_message.substr(marker + 2))) {
    if (line.rfind(kFormatMarker, 0) == 0) {
      fields.format_name = line.substr(kFormatMarker.size());
    } else if (line.rfind(kDescriptionPrefix, 0) == 0) {
      fields.format_description = line.substr(kDescriptionPrefix.size());
    }
  }
  if (fields.format_name.empty()) return std::nullopt;
  return fields;
}

std::optional<JudgeFields> parse_judge_prompt(std::string_view user_message) {
  if (user_message.rfind(kQuestionHeader, 0) != 0) return std::nullopt;
  const auto start = user_message.find(std::string("\n\n") + std::string(kAnswerStart));
  const auto end = user_message.rfind(kAnswerEnd);
  if (start == std::string_view::npos || end == std::string_view::npos || end < start) {
    return std::nullopt;
  }
  JudgeFields fields;
  fields.question =
      std::string(user_message.substr(kQuestionHeader.size(), start - kQuestionHeader.size()));
  const auto answer_begin = start + 2 + kAnswerStart.size();
  fields.answer = std::string(user_message.substr(answer_begin, end - answer_begin));
  return fields;
}

std::optional<std::string> find_format_marker(std::string_view text) {
  for (const auto& line : split_lines(text)) {
    if (line.rfind(kFormatMarker, 0) == 0) {
      auto name = trim(line.substr(kFormatMarker.size()));
      if (!name.empty()) return name;
    }
  }
  return std::nullopt;
}

}  // namespace format_adapter::prompts
