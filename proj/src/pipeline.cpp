#include "format_adapter/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <set>

#include <spdlog/spdlog.h>

#include "format_adapter/error.hpp"
#include "format_adapter/normalize.hpp"
#include "format_adapter/prompts.hpp"
#include "format_adapter/util.hpp"

namespace format_adapter::pipeline {

using llm::ChatRequest;
using llm::Stage;

void to_json(json& j, const Decoding& d) {
  j = json{{"temperature", d.temperature}, {"top_p", d.top_p}, {"max_tokens", d.max_tokens}};
  j["seed"] = d.seed ? json(*d.seed) : json(nullptr);
}

void from_json(const json& j, Decoding& d) {
  d.temperature = j.value("temperature", 0.0);
  d.top_p = j.value("top_p", 1.0);
  d.max_tokens = j.value("max_tokens", std::size_t{1024});
  d.seed.reset();
  if (j.contains("seed") && !j["seed"].is_null()) d.seed = j["seed"].get<std::uint64_t>();
}

ChatRequest make_request(const std::string& model_id, std::vector<llm::ChatMessage> messages,
                         const Decoding& decoding) {
  ChatRequest r;
  r.model_id = model_id;
  r.messages = std::move(messages);
  r.temperature = decoding.temperature;
  r.top_p = decoding.top_p;
  r.max_tokens = decoding.max_tokens;
  r.seed = decoding.seed;
  return r;
}

namespace {

llm::ChatResponse call(const StageClient& client, Stage stage, const ChatRequest& request) {
  return client.gateway.cached_complete(request, {client.run_id, stage});
}

std::string strip_emphasis(std::string s) {
  for (const std::string_view token : {"**", "__"}) {
    for (auto pos = s.find(token); pos != std::string::npos; pos = s.find(token)) {
      s.erase(pos, token.size());
    }
  }
  return trim(s);
}

std::pair<std::string, std::string> split_name_description(const std::string& body) {
  std::size_t best = std::string::npos;
  std::size_t width = 0;
  for (const std::string_view sep : {" \xe2\x80\x94 ", " \xe2\x80\x93 ", " -- ", " - "}) {
    const auto pos = body.find(sep);
    if (pos != std::string::npos && pos < best) {
      best = pos;
      width = sep.size();
    }
  }
  if (best == std::string::npos) return {strip_emphasis(body), ""};
  return {strip_emphasis(body.substr(0, best)), strip_emphasis(body.substr(best + width))};
}

void add_unique(std::vector<ReasoningFormat>& out, std::set<std::string>& seen, std::string category,
                std::string name, std::string description) {
  category = strip_emphasis(category);
  name = strip_emphasis(name);
  if (category.empty()) category = "General";
  if (name.empty()) return;
  auto id = format_id(category, name);
  if (id.size() <= 2 || !seen.insert(id).second) return;
  out.push_back({std::move(id), std::move(category), std::move(name), trim(description),
                 std::nullopt});
}

std::vector<ReasoningFormat> parse_outline(std::string_view text) {
  static const std::regex category_line(
      R"(^(?:\d+[.)]\s*|#+\s*)?(?:\*\*)?\s*category\s*(?:\d+\s*)?[:.-]\s*(.+)$)",
      std::regex::icase);
  static const std::regex format_line(
      R"(^(?:[-*+]|\d+[.)])\s*(?:\*\*)?\s*format\s*(?:\d+\s*)?:\s*(?:\*\*)?\s*(.+)$)",
      std::regex::icase);
  std::vector<ReasoningFormat> out;
  std::set<std::string> seen;
  std::string category;
  for (const auto& raw : split_lines(text)) {
    const auto line = trim(raw);
    std::smatch m;
    if (std::regex_match(line, m, format_line)) {
      auto [name, description] = split_name_description(m[1].str());
      add_unique(out, seen, category, name, description);
    } else if (std::regex_match(line, m, category_line)) {
      category = strip_emphasis(m[1].str());
    }
  }
  return out;
}

void collect_json(const json& node, const std::string& category, std::vector<ReasoningFormat>& out,
                  std::set<std::string>& seen) {
  if (node.is_array()) {
    for (const auto& item : node) collect_json(item, category, out, seen);
  } else if (node.is_object()) {
    auto text = [&](const char* key) {
      return node.contains(key) && node[key].is_string() ? node[key].get<std::string>()
                                                         : std::string();
    };
    if (node.contains("formats")) {
      auto inner = text("category");
      if (inner.empty()) inner = text("name");
      collect_json(node["formats"], inner.empty() ? category : inner, out, seen);
    } else if (node.contains("categories")) {
      collect_json(node["categories"], category, out, seen);
    } else {
      auto name = text("name");
      if (name.empty()) name = text("format");
      auto own = text("category");
      add_unique(out, seen, own.empty() ? category : own, name, text("description"));
    }
  } else if (node.is_string()) {
    add_unique(out, seen, category, node.get<std::string>(), "");
  }
}

std::vector<ReasoningFormat> parse_json_listing(std::string_view text) {
  const auto begin = text.find_first_of("[{");
  const auto end = text.find_last_of("]}");
  if (begin == std::string_view::npos || end == std::string_view::npos || end < begin) return {};
  const auto parsed = json::parse(text.substr(begin, end - begin + 1), nullptr, false);
  if (parsed.is_discarded()) return {};
  std::vector<ReasoningFormat> out;
  std::set<std::string> seen;
  collect_json(parsed, "", out, seen);
  return out;
}

template <typename E>
[[noreturn]] void rethrow_for_format(const E& e, const std::string& format_id) {
  const std::string message = "format " + format_id + ": " + e.what();
  if (const auto* t = dynamic_cast<const TransportError*>(&e)) {
    throw TransportError(message, t->attempts(), t->http_status());
  }
  throw Error(e.code(), message);
}

}  // namespace

std::vector<ReasoningFormat> parse_format_listing(std::string_view text) {
  auto formats = parse_outline(text);
  if (formats.empty()) formats = parse_json_listing(text);
  return formats;
}

FormatSet generate_formats(const StageClient& client, const TaskSpec& task,
                           const GenerationOptions& options) {
  if (options.target_count < 1) {
    throw Error(ErrorCode::validation, "target format count must be at least 1");
  }
  task.validate();

  auto ask = [&](const std::vector<llm::ChatMessage>& messages) {
    std::string last_text;
    for (int attempt = 0; attempt <= options.parse_retries; ++attempt) {
      auto decoding = options.decoding;
      // A different seed per retry so a cached unparseable reply is not replayed.
      if (attempt > 0) decoding.seed = decoding.seed.value_or(0) + static_cast<std::uint64_t>(attempt);
      const auto response =
          call(client, Stage::format_gen, make_request(options.model_id, messages, decoding));
      if (trim(response.text).empty()) {
        throw Error(ErrorCode::generation_failed, "format generation returned an empty reply");
      }
      auto parsed = parse_format_listing(response.text);
      if (!parsed.empty()) return parsed;
      spdlog::warn("format listing could not be parsed (attempt {} of {})", attempt + 1,
                   options.parse_retries + 1);
      last_text = response.text;
    }
    throw Error(ErrorCode::parse, "could not parse the format listing after " +
                                      std::to_string(options.parse_retries + 1) +
                                      " attempts; last reply:\n" + last_text);
  };

  FormatSet set;
  set.task_name = task.name;
  set.generation_model = options.model_id;
  std::set<std::string> seen;
  auto absorb = [&](const std::vector<ReasoningFormat>& formats) {
    std::size_t added = 0;
    for (const auto& f : formats) {
      if (set.formats.size() >= options.target_count) break;
      if (!seen.insert(f.id).second) continue;
      set.formats.push_back(f);
      ++added;
    }
    return added;
  };

  absorb(ask(prompts::format_generation_messages(task, options.target_count)));
  for (int extra = 0; extra < options.supplementary_calls &&
                      set.formats.size() < options.target_count;
       ++extra) {
    const auto missing = options.target_count - set.formats.size();
    try {
      const auto added =
          absorb(ask(prompts::supplementary_format_messages(task, set.formats, missing)));
      spdlog::info("supplementary format call {} added {} formats", extra + 1, added);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::parse && e.code() != ErrorCode::generation_failed) throw;
      spdlog::warn("supplementary format call failed: {}", e.what());
      break;
    }
  }

  if (set.formats.empty()) {
    throw Error(ErrorCode::generation_failed, "no reasoning formats were generated");
  }
  if (set.formats.size() < options.target_count) {
    spdlog::warn("generated {} formats, fewer than the requested {}", set.formats.size(),
                 options.target_count);
  }
  return set;
}

std::string rewrite_instruction(const StageClient& client, const TaskSpec& task,
                                const ReasoningFormat& format, const std::string& model_id,
                                const Decoding& decoding) {
  if (format.rewritten_instruction) {
    throw Error(ErrorCode::precondition,
                "format " + format.id + " already carries a rewritten instruction");
  }
  std::string text;
  try {
    text = call(client, Stage::rewrite,
                make_request(model_id, prompts::rewrite_messages(task.original_instruction, format),
                             decoding))
               .text;
  } catch (const Error& e) {
    rethrow_for_format(e, format.id);
  }
  text = trim(text);
  if (text.empty()) {
    throw Error(ErrorCode::rewrite, "format " + format.id + ": rewrite returned no instruction");
  }
  return text;
}

std::string generate_answer(const StageClient& client, const std::string& instruction,
                            const std::string& question, const std::string& model_id,
                            const Decoding& decoding) {
  if (trim(instruction).empty() || trim(question).empty()) {
    throw Error(ErrorCode::validation, "answer generation needs an instruction and a question");
  }
  return call(client, Stage::answer,
              make_request(model_id, prompts::answer_messages(instruction, question), decoding))
      .text;
}

std::vector<Sample> self_consistency_answers(const StageClient& client, const TaskSpec& task,
                                             const std::string& question, std::size_t k,
                                             std::uint64_t base_seed, const std::string& model_id,
                                             std::size_t max_tokens) {
  if (k < 1) throw Error(ErrorCode::validation, "self-consistency needs k >= 1");
  std::vector<Sample> samples;
  std::optional<Error> first_error;
  for (std::size_t i = 0; i < k; ++i) {
    Sample s;
    s.seed = base_seed + i;
    Decoding d{kSamplingTemperature, kSamplingTopP, max_tokens, s.seed};
    try {
      s.text = generate_answer(client, task.original_instruction, question, model_id, d);
    } catch (const Error& e) {
      s.error = e.what();
      if (!first_error) first_error = e;
    }
    samples.push_back(std::move(s));
  }
  const bool any = std::any_of(samples.begin(), samples.end(), [](const Sample& s) { return s.text.has_value(); });
  if (!any) {
    throw Error(first_error->code(),
                "all " + std::to_string(k) + " samples failed: " + first_error->what());
  }
  return samples;
}

// ---------------------------------------------------------------------------

namespace {

struct Marker {
  std::size_t end = 0;  // offset just past the marker
  std::optional<std::string> boxed;
};

std::optional<std::string> braced(std::string_view text, std::size_t open) {
  int depth = 0;
  for (std::size_t i = open; i < text.size(); ++i) {
    if (text[i] == '{') {
      ++depth;
    } else if (text[i] == '}' && --depth == 0) {
      return std::string(text.substr(open + 1, i - open - 1));
    }
  }
  return std::nullopt;
}

std::optional<Marker> last_marker(std::string_view text) {
  const auto lower = to_lower(text);
  std::optional<Marker> best;
  std::size_t best_pos = 0;
  for (const std::string_view m :
       {"final answer is", "final answer:", "the answer is", "answer is", "answer:"}) {
    const auto pos = lower.rfind(m);
    if (pos == std::string::npos || (best && pos <= best_pos)) continue;
    best = Marker{pos + m.size(), std::nullopt};
    best_pos = pos;
  }
  for (const std::string_view m : {"\\boxed{", "\\fbox{"}) {
    const auto pos = lower.rfind(m);
    if (pos == std::string::npos || (best && pos <= best_pos)) continue;
    if (auto content = braced(text, pos + m.size() - 1)) {
      best = Marker{pos + m.size(), std::move(content)};
      best_pos = pos;
    }
  }
  return best;
}

std::string expand_latex_fractions(std::string s) {
  static const std::regex frac(R"(\\[dt]?frac\{([^{}]*)\}\{([^{}]*)\})");
  return std::regex_replace(s, frac, "$1/$2");
}

const std::regex& number_pattern() {
  static const std::regex pattern(R"([-+]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?(?:/\d+)?)");
  return pattern;
}

std::optional<std::string> first_number(const std::string& text) {
  std::smatch m;
  if (std::regex_search(text, m, number_pattern())) return m.str();
  return std::nullopt;
}

std::optional<std::string> last_number(const std::string& text) {
  std::optional<std::string> last;
  for (std::sregex_iterator it(text.begin(), text.end(), number_pattern()), end; it != end; ++it) {
    last = it->str();
  }
  return last;
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

// Standalone option letters A-E; lower-case letters only inside parentheses.
std::vector<char> option_letters(std::string_view text) {
  std::vector<char> out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (up < 'A' || up > 'E') continue;
    const bool left = i == 0 || !is_word_char(text[i - 1]);
    const bool right = i + 1 == text.size() || !is_word_char(text[i + 1]);
    if (!left || !right) continue;
    const bool parenthesised = i > 0 && i + 1 < text.size() && text[i - 1] == '(' && text[i + 1] == ')';
    if (c == up || parenthesised) out.push_back(up);
  }
  return out;
}

std::optional<std::string> choice_after_marker(std::string_view tail) {
  // A single letter right after the marker counts in either case ("answer: b").
  std::size_t i = 0;
  while (i < tail.size() && !is_word_char(tail[i])) ++i;
  if (i < tail.size() && (i + 1 == tail.size() || !is_word_char(tail[i + 1]))) {
    const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(tail[i])));
    if (up >= 'A' && up <= 'E') return std::string(1, up);
  }
  const auto letters = option_letters(tail);
  if (!letters.empty()) return std::string(1, letters.front());
  return std::nullopt;
}

std::optional<std::string> candidate(std::string_view raw, AnswerKind kind) {
  const std::string text(raw);
  const auto marker = last_marker(text);
  switch (kind) {
    case AnswerKind::numeric: {
      if (marker) {
        const auto region = marker->boxed ? expand_latex_fractions(*marker->boxed)
                                          : expand_latex_fractions(text.substr(marker->end));
        if (auto n = first_number(region)) return n;
      }
      return last_number(expand_latex_fractions(text));
    }
    case AnswerKind::multiple_choice: {
      if (marker) {
        if (auto c = choice_after_marker(marker->boxed ? *marker->boxed : text.substr(marker->end))) {
          return c;
        }
      }
      const auto letters = option_letters(text);
      if (letters.empty()) return std::nullopt;
      return std::string(1, letters.back());
    }
    case AnswerKind::free_text: {
      if (marker) {
        if (marker->boxed) return *marker->boxed;
        const auto tail = text.substr(marker->end);
        const auto lines = split_lines(tail);
        for (const auto& line : lines) {
          auto cleaned = strip_emphasis(line);
          while (!cleaned.empty() && (cleaned.front() == ':' || cleaned.front() == '-')) {
            cleaned = trim(cleaned.substr(1));
          }
          if (!cleaned.empty()) return cleaned;
        }
        return std::nullopt;
      }
      // Without a marker only a one-line reply is taken as the answer itself.
      const auto trimmed = trim(text);
      if (!trimmed.empty() && trimmed.find('\n') == std::string::npos) return trimmed;
      return std::nullopt;
    }
  }
  return std::nullopt;
}

}  // namespace

Extraction extract_answer(std::string_view raw_text, AnswerKind kind) {
  const auto c = candidate(raw_text, kind);
  if (!c) return {ensemble::no_answer(), false};
  auto label = eval::normalize(*c, kind);
  const bool found = !label.is_no_answer();
  return {std::move(label), found};
}

void to_json(json& j, const AnswerRecord& r) {
  j = json{{"question_id", r.question_id}, {"format_id", r.format_id},
           {"answer", r.answer.value()},     {"no_answer", r.no_answer},
           {"raw_text_ref", r.raw_text_ref}, {"raw_text", r.raw_text}};
}

void from_json(const json& j, AnswerRecord& r) {
  r.question_id = j.at("question_id").get<std::string>();
  r.format_id = j.at("format_id").get<std::string>();
  r.answer = ensemble::AnswerLabel(j.at("answer").get<std::string>());
  r.no_answer = j.value("no_answer", r.answer.is_no_answer());
  r.raw_text = j.at("raw_text").get<std::string>();
  r.raw_text_ref = j.value("raw_text_ref", sha256_hex(r.raw_text));
}

AnswerRecord make_answer_record(std::string question_id, std::string format_id,
                                std::string raw_text, AnswerKind kind) {
  AnswerRecord r;
  r.question_id = std::move(question_id);
  r.format_id = std::move(format_id);
  const auto extraction = extract_answer(raw_text, kind);
  r.answer = extraction.label;
  r.no_answer = !extraction.found;
  r.raw_text_ref = sha256_hex(raw_text);
  r.raw_text = std::move(raw_text);
  return r;
}

}  // namespace format_adapter::pipeline
