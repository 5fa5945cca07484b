#include "format_adapter/judge.hpp"

#include <algorithm>
#include <cctype>
#include <regex>

#include <spdlog/spdlog.h>

#include "format_adapter/error.hpp"
#include "format_adapter/prompts.hpp"
#include "format_adapter/util.hpp"

namespace format_adapter::judge {

namespace {

struct Hit {
  std::ptrdiff_t pos = 0;
  long long value = 0;
};

std::optional<Hit> earliest(const std::string& text, const std::regex& pattern) {
  std::smatch m;
  if (!std::regex_search(text, m, pattern)) return std::nullopt;
  try {
    return Hit{m.position(0), std::stoll(m[1].str())};
  } catch (const std::out_of_range&) {
    return Hit{m.position(0), 1000};
  }
}

ParsedScore clamp_value(long long value) {
  if (value < 1) return {1, true};
  if (value > 10) return {10, true};
  return {static_cast<int>(value), false};
}

bool is_digit_like(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0 || c == '.'; }

std::optional<int> last_standalone_rating(const std::string& text) {
  std::optional<int> last;
  for (std::size_t i = 0; i < text.size();) {
    if (!std::isdigit(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
    const bool left_ok = i == 0 || (!is_digit_like(text[i - 1]) && !std::isalpha(static_cast<unsigned char>(text[i - 1])));
    // A trailing sentence period is fine; a decimal point followed by a digit is not.
    const bool decimal = j + 1 < text.size() && text[j] == '.' &&
                         std::isdigit(static_cast<unsigned char>(text[j + 1]));
    const bool right_ok = j == text.size() || (!decimal && !std::isalpha(static_cast<unsigned char>(text[j])));
    if (left_ok && right_ok && j - i <= 2) {
      const int v = std::stoi(text.substr(i, j - i));
      if (v >= 1 && v <= 10) last = v;
    }
    i = j;
  }
  return last;
}

}  // namespace

ParsedScore parse_score(std::string_view input) {
  const std::string text(input);
  static const std::regex bracketed(R"(\[\[\s*(\d+)(?:\.\d+)?\s*\]\])");
  static const std::regex marked(
      R"(\b(?:score|rating|rate|rated)\s*(?:of|is|=|:)?\s*[*_\[(]*\s*(\d+))", std::regex::icase);
  static const std::regex slash_ten(R"((\d+)(?:\.\d+)?\s*/\s*10\b)");
  static const std::regex out_of_ten(R"((\d+)(?:\.\d+)?\s+out\s+of\s+10\b)", std::regex::icase);

  if (const auto hit = earliest(text, bracketed)) return clamp_value(hit->value);

  std::optional<Hit> best;
  for (const auto* pattern : {&marked, &slash_ten, &out_of_ten}) {
    const auto hit = earliest(text, *pattern);
    if (hit && (!best || hit->pos < best->pos)) best = hit;
  }
  if (best) return clamp_value(best->value);

  if (const auto v = last_standalone_rating(text)) return {*v, false};
  return {};
}

void to_json(json& j, const ScoreRecord& r) {
  j = json{{"question_id", r.question_id},
           {"format_id", r.format_id},
           {"raw_score", r.raw_score ? json(*r.raw_score) : json(nullptr)},
           {"score", r.score},
           {"defaulted", r.defaulted},
           {"clamped", r.clamped},
           {"raw_judge_text", r.raw_judge_text}};
}

void from_json(const json& j, ScoreRecord& r) {
  r.question_id = j.at("question_id").get<std::string>();
  r.format_id = j.at("format_id").get<std::string>();
  r.raw_judge_text = j.value("raw_judge_text", std::string());
  r.raw_score.reset();
  if (j.contains("raw_score") && !j["raw_score"].is_null()) r.raw_score = j["raw_score"].get<int>();
  r.score = j.at("score").get<double>();
  r.defaulted = j.value("defaulted", !r.raw_score.has_value());
  r.clamped = j.value("clamped", false);
  if (r.score < 0.0 || r.score > 1.0) {
    throw Error(ErrorCode::validation, "score outside [0,1] for (" + r.question_id + ", " +
                                           r.format_id + ")");
  }
}

ScoreRecord make_score_record(std::string question_id, std::string format_id,
                              std::string judge_text) {
  ScoreRecord r;
  r.question_id = std::move(question_id);
  r.format_id = std::move(format_id);
  const auto parsed = parse_score(judge_text);
  r.raw_judge_text = std::move(judge_text);
  r.raw_score = parsed.value;
  r.clamped = parsed.clamped;
  r.defaulted = !parsed.value;
  r.score = parsed.value ? *parsed.value / 10.0 : kDefaultScore;
  if (r.clamped) {
    spdlog::warn("judge rating for ({}, {}) was out of range and clamped to {}", r.question_id,
                 r.format_id, *r.raw_score);
  }
  if (r.defaulted) {
    spdlog::warn("no rating found in judge output for ({}, {}); using {}", r.question_id,
                 r.format_id, kDefaultScore);
  }
  return r;
}

ScoreRecord score_answer(const pipeline::StageClient& client, const std::string& question_id,
                         const std::string& format_id, const std::string& question,
                         const std::string& answer_text, const JudgeOptions& options) {
  if (trim(question).empty() || trim(answer_text).empty()) {
    throw Error(ErrorCode::validation, "judge needs a question and an answer");
  }
  const auto request = pipeline::make_request(
      options.model_id, prompts::judge_messages(question, answer_text), options.decoding);
  const auto response = client.gateway.cached_complete(request, {client.run_id, llm::Stage::score});
  return make_score_record(question_id, format_id, response.text);
}

}  // namespace format_adapter::judge
