#include "format_adapter/task.hpp"

#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "format_adapter/error.hpp"
#include "format_adapter/normalize.hpp"
#include "format_adapter/util.hpp"

namespace format_adapter {

std::string_view to_string(AnswerKind kind) {
  switch (kind) {
    case AnswerKind::numeric: return "numeric";
    case AnswerKind::multiple_choice: return "multiple_choice";
    case AnswerKind::free_text: return "free_text";
  }
  return "numeric";
}

AnswerKind answer_kind_from_string(std::string_view s) {
  if (s == "numeric") return AnswerKind::numeric;
  if (s == "multiple_choice") return AnswerKind::multiple_choice;
  if (s == "free_text") return AnswerKind::free_text;
  throw Error(ErrorCode::validation, "unknown answer kind '" + std::string(s) + "'");
}

void TaskSpec::validate() const {
  const std::pair<const char*, const std::string*> fields[] = {
      {"name", &name},
      {"definition", &definition},
      {"example_question", &example_question},
      {"example_answer", &example_answer},
      {"original_instruction", &original_instruction}};
  for (const auto& [field, value] : fields) {
    if (trim(*value).empty()) {
      throw Error(ErrorCode::validation, std::string("task field '") + field + "' is empty");
    }
  }
}

void to_json(json& j, const TaskSpec& t) {
  j = json{{"name", t.name},
           {"definition", t.definition},
           {"example_question", t.example_question},
           {"example_answer", t.example_answer},
           {"original_instruction", t.original_instruction},
           {"answer_kind", to_string(t.answer_kind)}};
}

void from_json(const json& j, TaskSpec& t) {
  t.name = j.at("name").get<std::string>();
  t.definition = j.at("definition").get<std::string>();
  t.example_question = j.at("example_question").get<std::string>();
  t.example_answer = j.at("example_answer").get<std::string>();
  t.original_instruction = j.at("original_instruction").get<std::string>();
  t.answer_kind = answer_kind_from_string(j.at("answer_kind").get<std::string>());
}

TaskSpec load_task(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::config, "cannot open task file " + path.string());
  try {
    auto task = json::parse(in).get<TaskSpec>();
    task.validate();
    return task;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::validation, "invalid task file " + path.string() + ": " + e.what());
  }
}

namespace {

std::string slug(std::string_view text) {
  std::string out;
  bool pending_dash = false;
  for (unsigned char c : text) {
    const bool keep = std::isalnum(c) != 0 || c >= 0x80;
    if (keep) {
      if (pending_dash && !out.empty()) out.push_back('-');
      pending_dash = false;
      out.push_back(static_cast<char>(std::tolower(c)));
    } else {
      pending_dash = true;
    }
  }
  return out;
}

}  // namespace

std::string format_id(std::string_view category, std::string_view name) {
  return slug(category) + "--" + slug(name);
}

void FormatSet::validate() const {
  if (formats.empty()) {
    throw Error(ErrorCode::validation, "format set is empty");
  }
  std::set<std::string> seen;
  for (const auto& f : formats) {
    if (trim(f.category).empty() || trim(f.name).empty()) {
      throw Error(ErrorCode::validation, "format '" + f.id + "' lacks a category or name");
    }
    if (!seen.insert(f.id).second) {
      throw Error(ErrorCode::validation, "duplicate format id '" + f.id + "'");
    }
  }
}

const ReasoningFormat* FormatSet::find(std::string_view id) const {
  for (const auto& f : formats) {
    if (f.id == id) return &f;
  }
  return nullptr;
}

void to_json(json& j, const ReasoningFormat& f) {
  j = json{{"id", f.id},
           {"category", f.category},
           {"name", f.name},
           {"description", f.description},
           {"rewritten_instruction",
            f.rewritten_instruction ? json(*f.rewritten_instruction) : json(nullptr)}};
}

void from_json(const json& j, ReasoningFormat& f) {
  f.id = j.at("id").get<std::string>();
  f.category = j.at("category").get<std::string>();
  f.name = j.at("name").get<std::string>();
  f.description = j.value("description", std::string());
  const auto it = j.find("rewritten_instruction");
  if (it != j.end() && !it->is_null()) {
    f.rewritten_instruction = it->get<std::string>();
  } else {
    f.rewritten_instruction.reset();
  }
}

void to_json(json& j, const FormatSet& s) {
  j = json{{"task_name", s.task_name},
           {"generation_model", s.generation_model},
           {"formats", s.formats}};
}

void from_json(const json& j, FormatSet& s) {
  s.task_name = j.at("task_name").get<std::string>();
  s.generation_model = j.at("generation_model").get<std::string>();
  s.formats = j.at("formats").get<std::vector<ReasoningFormat>>();
}

Dataset parse_dataset(std::string_view jsonl, AnswerKind kind) {
  Dataset out;
  std::set<std::string> ids;
  std::size_t line_no = 0;
  for (const auto& raw : split_lines(jsonl)) {
    ++line_no;
    if (trim(raw).empty()) continue;
    const auto where = "dataset line " + std::to_string(line_no);
    json j;
    try {
      j = json::parse(raw);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::validation, where + ": " + e.what());
    }
    DatasetRecord record;
    try {
      record.id = j.at("id").get<std::string>();
      record.question = j.at("question").get<std::string>();
      const auto answer = j.at("answer").is_string() ? j.at("answer").get<std::string>()
                                                     : j.at("answer").dump();
      if (trim(answer).empty()) throw Error(ErrorCode::validation, where + ": empty gold answer");
      record.gold = eval::normalize(answer, kind);
      if (j.contains("choices") && !j["choices"].is_null()) {
        record.choices = j["choices"].get<std::vector<std::string>>();
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::validation, where + ": " + e.what());
    }
    if (record.id.empty()) throw Error(ErrorCode::validation, where + ": empty id");
    if (!ids.insert(record.id).second) {
      throw Error(ErrorCode::validation, where + ": duplicate id '" + record.id + "'");
    }
    const bool is_mc = kind == AnswerKind::multiple_choice;
    if (is_mc != record.choices.has_value()) {
      throw Error(ErrorCode::validation,
                  where + (is_mc ? ": multiple-choice item without choices"
                                 : ": choices given for a non multiple-choice task"));
    }
    out.push_back(std::move(record));
  }
  return out;
}

Dataset load_dataset(const std::filesystem::path& path, AnswerKind kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::config, "cannot open dataset " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_dataset(buffer.str(), kind);
}

std::string dataset_to_jsonl(const Dataset& dataset) {
  std::string out;
  for (const auto& r : dataset) {
    json j{{"id", r.id}, {"question", r.question}, {"answer", r.gold.value()}};
    if (r.choices) j["choices"] = *r.choices;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string render_question(const DatasetRecord& record) {
  if (!record.choices) return record.question;
  std::string out = record.question + "\nOptions:";
  char letter = 'A';
  for (const auto& choice : *record.choices) {
    out += "\n(";
    out += letter++;
    out += ") " + choice;
  }
  return out;
}

}  // namespace format_adapter
