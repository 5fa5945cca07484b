#pragma once

// Reading and writing run-directory artifacts. Singular objects are whole
// JSON files written atomically; answers and scores are append-only JSONL.

#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include "format_adapter/gateway.hpp"
#include "format_adapter/judge.hpp"
#include "format_adapter/pipeline.hpp"
#include "format_adapter/selector.hpp"
#include "format_adapter/task.hpp"

namespace format_adapter::artifacts {

namespace fs = std::filesystem;

inline constexpr std::string_view kRunFile = "run.json";
inline constexpr std::string_view kFormatsFile = "formats.json";
inline constexpr std::string_view kRewrittenFile = "rewritten.json";
inline constexpr std::string_view kAnswersFile = "answers.jsonl";
inline constexpr std::string_view kScoresFile = "scores.jsonl";
inline constexpr std::string_view kSelectionFile = "selection.json";
inline constexpr std::string_view kMetricsFile = "metrics.json";
inline constexpr std::string_view kUsageFile = "usage.json";
inline constexpr std::string_view kLockFile = ".lock";
inline constexpr std::string_view kCacheDir = "cache";
inline constexpr std::string_view kAnalysisDir = "analysis";

// Pretty-printed, newline-terminated, replaced atomically.
void write_json(const fs::path& path, const json& value);
void write_text(const fs::path& path, const std::string& text);

// A missing file is a stage-dependency error naming it; malformed JSON is a
// validation error.
json read_json(const fs::path& path);

// Thread-safe appender for JSONL artifacts.
class JsonlWriter {
 public:
  explicit JsonlWriter(const fs::path& path);
  void append(const json& line);

 private:
  std::mutex mutex_;
  std::ofstream out_;
};

// Reads JSONL. A malformed final line (an interrupted append) is dropped
// with a warning; a malformed earlier line is a validation error.
std::vector<json> read_jsonl(const fs::path& path);

// Rewrites a JSONL file with its lines sorted by (question_id, format_id).
void sort_jsonl(const fs::path& path);

FormatSet load_formats(const fs::path& path);
std::vector<pipeline::AnswerRecord> load_answers(const fs::path& path);
std::vector<judge::ScoreRecord> load_scores(const fs::path& path);
std::vector<select::SelectionResult> load_selection(const fs::path& path);
llm::UsageReport load_usage(const fs::path& path);

// Joins answers with their scores. Every answer needs exactly one score.
std::vector<select::FormatRecord> join_records(const std::vector<pipeline::AnswerRecord>& answers,
                                               const std::vector<judge::ScoreRecord>& scores);

// Exclusive ownership of a run directory for the lifetime of the object.
class RunLock {
 public:
  explicit RunLock(const fs::path& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  int fd_ = -1;
  fs::path path_;
};

}  // namespace format_adapter::artifacts
