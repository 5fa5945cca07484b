#pragma once

// Generation stages: reasoning formats for a task, one rewritten instruction
// per format, and answers to questions under a given instruction.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "format_adapter/gateway.hpp"
#include "format_adapter/task.hpp"

namespace format_adapter::pipeline {

struct Decoding {
  double temperature = 0.0;
  double top_p = 1.0;
  std::size_t max_tokens = 1024;
  std::optional<std::uint64_t> seed;
};

void to_json(json& j, const Decoding& d);
void from_json(const json& j, Decoding& d);

// Gateway plus the run that calls are billed to. Calls go through the
// response cache when the gateway has one.
struct StageClient {
  llm::Gateway& gateway;
  std::string run_id;
};

llm::ChatRequest make_request(const std::string& model_id, std::vector<llm::ChatMessage> messages,
                              const Decoding& decoding);

// Parses a format listing: the numbered "Category:" / "- Format:" outline,
// or JSON as a fallback. Returns formats in listing order, duplicates
// removed; empty when nothing could be parsed.
std::vector<ReasoningFormat> parse_format_listing(std::string_view text);

struct GenerationOptions {
  std::string model_id;
  std::size_t target_count = 15;
  Decoding decoding;
  int parse_retries = 2;         // extra attempts when a reply cannot be parsed
  int supplementary_calls = 2;  // follow-up calls when too few formats come back
};

FormatSet generate_formats(const StageClient& client, const TaskSpec& task,
                           const GenerationOptions& options);

std::string rewrite_instruction(const StageClient& client, const TaskSpec& task,
                                const ReasoningFormat& format, const std::string& model_id,
                                const Decoding& decoding = {});

std::string generate_answer(const StageClient& client, const std::string& instruction,
                            const std::string& question, const std::string& model_id,
                            const Decoding& decoding = {});

inline constexpr double kSamplingTemperature = 0.5;
inline constexpr double kSamplingTopP = 0.9;

struct Sample {
  std::uint64_t seed = 0;
  std::optional<std::string> text;  // absent when the call failed
  std::string error;
};

// k answers under the original instruction with seeds base_seed..base_seed+k-1.
// Throws only when every sample fails.
std::vector<Sample> self_consistency_answers(const StageClient& client, const TaskSpec& task,
                                             const std::string& question, std::size_t k,
                                             std::uint64_t base_seed, const std::string& model_id,
                                             std::size_t max_tokens = 1024);

struct Extraction {
  ensemble::AnswerLabel label;  // normalized; the no-answer sentinel when nothing was found
  bool found = false;
};

Extraction extract_answer(std::string_view raw_text, AnswerKind kind);

// One generated answer, as persisted in answers.jsonl.
struct AnswerRecord {
  std::string question_id;
  std::string format_id;
  std::string raw_text;
  std::string raw_text_ref;  // sha256 of raw_text
  ensemble::AnswerLabel answer;
  bool no_answer = false;
};

void to_json(json& j, const AnswerRecord& r);
void from_json(const json& j, AnswerRecord& r);

AnswerRecord make_answer_record(std::string question_id, std::string format_id,
                                std::string raw_text, AnswerKind kind);

}  // namespace format_adapter::pipeline
