#include "format_adapter/artifacts.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <map>
#include <sstream>

#include <spdlog/spdlog.h>

#include "format_adapter/error.hpp"

namespace format_adapter::artifacts {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::config, "cannot write " + tmp.string());
    out << text;
    if (!out) throw Error(ErrorCode::config, "failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_json(const fs::path& path, const json& value) { write_text(path, value.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::stage_dependency, "required artifact " + path.filename().string() +
                                                 " not found in " + path.parent_path().string());
  }
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::validation, "malformed " + path.string() + ": " + e.what());
  }
}

JsonlWriter::JsonlWriter(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  out_.open(path, std::ios::binary | std::ios::app);
  if (!out_) throw Error(ErrorCode::config, "cannot append to " + path.string());
}

void JsonlWriter::append(const json& line) {
  const auto text = line.dump() + "\n";
  std::lock_guard lock(mutex_);
  out_ << text;
  out_.flush();
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::stage_dependency, "required artifact " + path.filename().string() +
                                                 " not found in " + path.parent_path().string());
  }
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) lines.push_back(std::move(line));
  }
  std::vector<json> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto parsed = json::parse(lines[i], nullptr, false);
    if (parsed.is_discarded()) {
      if (i + 1 == lines.size()) {
        spdlog::warn("{}: dropping incomplete final line", path.string());
        break;
      }
      throw Error(ErrorCode::validation,
                  path.string() + ": line " + std::to_string(i + 1) + " is not valid JSON");
    }
    out.push_back(std::move(parsed));
  }
  return out;
}

void sort_jsonl(const fs::path& path) {
  auto lines = read_jsonl(path);
  std::stable_sort(lines.begin(), lines.end(), [](const json& a, const json& b) {
    return std::tie(a.at("question_id").get_ref<const std::string&>(),
                    a.at("format_id").get_ref<const std::string&>()) <
           std::tie(b.at("question_id").get_ref<const std::string&>(),
                    b.at("format_id").get_ref<const std::string&>());
  });
  std::string text;
  for (const auto& l : lines) text += l.dump() + "\n";
  write_text(path, text);
}

namespace {

template <typename T>
std::vector<T> load_records(const fs::path& path) {
  std::vector<T> out;
  std::size_t line = 0;
  for (const auto& j : read_jsonl(path)) {
    ++line;
    try {
      out.push_back(j.get<T>());
    } catch (const json::exception& e) {
      throw Error(ErrorCode::validation,
                  path.string() + ": record " + std::to_string(line) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

FormatSet load_formats(const fs::path& path) {
  const auto j = read_json(path);
  try {
    auto set = j.get<FormatSet>();
    set.validate();
    return set;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::validation, path.string() + ": " + e.what());
  }
}

std::vector<pipeline::AnswerRecord> load_answers(const fs::path& path) {
  return load_records<pipeline::AnswerRecord>(path);
}

std::vector<judge::ScoreRecord> load_scores(const fs::path& path) {
  return load_records<judge::ScoreRecord>(path);
}

std::vector<select::SelectionResult> load_selection(const fs::path& path) {
  const auto j = read_json(path);
  try {
    return j.get<std::vector<select::SelectionResult>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::validation, path.string() + ": " + e.what());
  }
}

llm::UsageReport load_usage(const fs::path& path) {
  const auto j = read_json(path);
  try {
    return j.get<llm::UsageReport>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::validation, path.string() + ": " + e.what());
  }
}

std::vector<select::FormatRecord> join_records(const std::vector<pipeline::AnswerRecord>& answers,
                                               const std::vector<judge::ScoreRecord>& scores) {
  std::map<std::pair<std::string, std::string>, const judge::ScoreRecord*> by_key;
  for (const auto& s : scores) by_key[{s.question_id, s.format_id}] = &s;
  std::vector<select::FormatRecord> out;
  std::vector<std::string> missing;
  for (const auto& a : answers) {
    const auto it = by_key.find({a.question_id, a.format_id});
    if (it == by_key.end()) {
      missing.push_back(a.question_id + "/" + a.format_id);
      continue;
    }
    out.push_back({a.question_id, a.format_id, a.answer, it->second->score, a.raw_text_ref});
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 10; ++i) list += (i ? ", " : "") + missing[i];
    if (missing.size() > 10) list += ", ...";
    throw Error(ErrorCode::incomplete_run,
                std::to_string(missing.size()) + " answers have no score: " + list);
  }
  return out;
}

RunLock::RunLock(const fs::path& run_dir) : path_(run_dir / kLockFile) {
  fs::create_directories(run_dir);
  fd_ = ::open(path_.c_str(), O_CREAT | O_RDWR, 0644);
  if (fd_ < 0) throw Error(ErrorCode::config, "cannot create lock file " + path_.string());
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw Error(ErrorCode::config, "run directory " + run_dir.string() +
                                       " is in use by another process");
  }
}

RunLock::~RunLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

}  // namespace format_adapter::artifacts
