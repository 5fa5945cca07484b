#include "format_adapter/sim_backend.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "format_adapter/error.hpp"
#include "format_adapter/prompts.hpp"
#include "format_adapter/util.hpp"

namespace format_adapter::sim {

using llm::ChatRequest;
using llm::ChatResponse;
using llm::Role;

namespace {

template <typename T>
void check_distribution(const std::vector<T>& items, const std::string& where) {
  if (items.empty()) return;
  double total = 0.0;
  for (const auto& item : items) {
    if (!(item.p >= 0.0)) throw Error(ErrorCode::validation, where + ": negative probability");
    total += item.p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorCode::validation,
                where + ": probabilities sum to " + std::to_string(total) + ", expected 1");
  }
}

void check_scores(const std::vector<ScoreProbability>& scores, const std::string& where) {
  for (const auto& s : scores) {
    if (s.score < 1 || s.score > 10) {
      throw Error(ErrorCode::validation, where + ": score outside 1..10");
    }
  }
  check_distribution(scores, where);
}

template <typename T>
const T& draw(const std::vector<T>& items, std::mt19937_64& rng) {
  const double u = unit_uniform(rng);
  double cumulative = 0.0;
  for (const auto& item : items) {
    cumulative += item.p;
    if (u < cumulative) return item;
  }
  // Rounding can leave u just above the final cumulative sum.
  for (auto it = items.rbegin(); it != items.rend(); ++it) {
    if (it->p > 0.0) return *it;
  }
  return items.back();
}

const std::vector<LabelProbability>& fallback_answers() {
  static const std::vector<LabelProbability> answers{{std::string(ensemble::kNoAnswer), 1.0}};
  return answers;
}

const std::vector<ScoreProbability>& fallback_scores() {
  static const std::vector<ScoreProbability> scores{{5, 1.0}};
  return scores;
}

std::string system_text(const ChatRequest& request) {
  for (const auto& m : request.messages) {
    if (m.role == Role::system) return m.content;
  }
  return {};
}

bool starts_with(std::string_view text, std::string_view prefix) {
  return text.substr(0, prefix.size()) == prefix;
}

}  // namespace

void SimProfile::validate() const {
  check_distribution(defaults.answers, "profile defaults");
  check_scores(defaults.scores, "profile defaults");
  for (const auto& [key, dist] : entries) {
    const auto where = "profile entry (" + key.first + ", " + key.second + ")";
    check_distribution(dist.answers, where);
    check_scores(dist.scores, where);
  }
}

const std::vector<LabelProbability>& SimProfile::answers_for(
    const std::string& format, const std::string& question_id) const {
  const auto it = entries.find({format, question_id});
  if (it != entries.end() && !it->second.answers.empty()) return it->second.answers;
  return defaults.answers.empty() ? fallback_answers() : defaults.answers;
}

const std::vector<ScoreProbability>& SimProfile::scores_for(const std::string& format,
                                                            const std::string& question_id) const {
  const auto it = entries.find({format, question_id});
  if (it != entries.end() && !it->second.scores.empty()) return it->second.scores;
  return defaults.scores.empty() ? fallback_scores() : defaults.scores;
}

std::vector<SimFormat> SimProfile::effective_formats() const {
  if (!formats.empty()) return formats;
  std::vector<SimFormat> out;
  std::set<std::string> seen;
  for (const auto& [key, _] : entries) {
    if (key.first == kOriginalFormat || !seen.insert(key.first).second) continue;
    out.push_back({"General", key.first, ""});
  }
  return out;
}

void to_json(json& j, const SimProfile& p) {
  auto dist_json = [](const Distribution& d) {
    json answers = json::array();
    for (const auto& a : d.answers) answers.push_back({{"label", a.label}, {"p", a.p}});
    json scores = json::array();
    for (const auto& s : d.scores) scores.push_back({{"score", s.score}, {"p", s.p}});
    return std::pair{answers, scores};
  };
  const auto [da, ds] = dist_json(p.defaults);
  json entries = json::array();
  for (const auto& [key, dist] : p.entries) {
    const auto [a, s] = dist_json(dist);
    entries.push_back({{"format", key.first}, {"question_id", key.second}, {"answers", a},
                       {"scores", s}});
  }
  json formats = json::array();
  for (const auto& f : p.formats) {
    formats.push_back({{"category", f.category}, {"name", f.name}, {"description", f.description}});
  }
  j = json{{"seed", p.seed},
           {"rewrite", p.rewrite == RewriteStyle::identity ? "identity" : "tagged"},
           {"defaults", {{"answers", da}, {"scores", ds}}},
           {"formats", formats},
           {"entries", entries}};
}

void from_json(const json& j, SimProfile& p) {
  auto read_dist = [](const json& node) {
    Distribution d;
    for (const auto& a : node.value("answers", json::array())) {
      d.answers.push_back({a.at("label").get<std::string>(), a.at("p").get<double>()});
    }
    for (const auto& s : node.value("scores", json::array())) {
      d.scores.push_back({s.at("score").get<int>(), s.at("p").get<double>()});
    }
    return d;
  };
  p.seed = j.value("seed", std::uint64_t{0});
  const auto rewrite = j.value("rewrite", std::string("tagged"));
  if (rewrite != "tagged" && rewrite != "identity") {
    throw Error(ErrorCode::validation, "unknown rewrite style '" + rewrite + "'");
  }
  p.rewrite = rewrite == "identity" ? RewriteStyle::identity : RewriteStyle::tagged;
  p.defaults = j.contains("defaults") ? read_dist(j.at("defaults")) : Distribution{};
  p.formats.clear();
  for (const auto& f : j.value("formats", json::array())) {
    p.formats.push_back({f.value("category", std::string("General")), f.at("name").get<std::string>(),
                         f.value("description", std::string())});
  }
  p.entries.clear();
  for (const auto& e : j.value("entries", json::array())) {
    p.entries[{e.at("format").get<std::string>(), e.at("question_id").get<std::string>()}] =
        read_dist(e);
  }
}

SimProfile load_sim_profile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::config, "cannot open simulation profile " + path.string());
  try {
    auto profile = json::parse(in).get<SimProfile>();
    profile.validate();
    return profile;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::validation, "invalid simulation profile " + path.string() + ": " +
                                           e.what());
  }
}

QuestionIndex make_question_index(const Dataset& dataset) {
  QuestionIndex index;
  for (const auto& r : dataset) index[render_question(r)] = r.id;
  return index;
}

// ---------------------------------------------------------------------------

SimulatedBackend::SimulatedBackend(SimProfile profile, QuestionIndex questions)
    : profile_(std::move(profile)), questions_(std::move(questions)) {
  profile_.validate();
}

std::string SimulatedBackend::question_id(const std::string& rendered) const {
  const auto it = questions_.find(rendered);
  return it == questions_.end() ? std::string() : it->second;
}

std::string SimulatedBackend::format_listing(const std::string& user, bool supplementary) const {
  const auto all = profile_.effective_formats();
  const std::size_t wanted = prompts::requested_format_count(user).value_or(all.size());
  std::set<std::string> listed;
  if (supplementary) {
    for (const auto& name : prompts::listed_format_names(user)) listed.insert(to_lower(name));
  }
  std::vector<SimFormat> chosen;
  for (const auto& f : all) {
    if (chosen.size() >= wanted) break;
    if (listed.count(to_lower(f.name))) continue;
    chosen.push_back(f);
  }
  // Group by category, categories in first-appearance order.
  std::vector<std::string> categories;
  for (const auto& f : chosen) {
    if (std::find(categories.begin(), categories.end(), f.category) == categories.end()) {
      categories.push_back(f.category);
    }
  }
  std::string out;
  int number = 1;
  for (const auto& category : categories) {
    out += std::to_string(number++) + ". Category: " + category + "\n";
    for (const auto& f : chosen) {
      if (f.category != category) continue;
      out += "   - Format: " + f.name;
      if (!f.description.empty()) out += " — " + f.description;
      out += "\n";
    }
  }
  return out;
}

std::string SimulatedBackend::rewrite(const std::string& user) const {
  const auto fields = prompts::parse_rewrite_prompt(user);
  if (!fields) return "Solve the question.";
  if (profile_.rewrite == RewriteStyle::identity) return fields->original_instruction;
  std::string out = std::string(prompts::kFormatMarker) + fields->format_name + "\n" +
                    fields->original_instruction + "\nCarry out all reasoning in the " +
                    fields->format_name + " format";
  out += fields->format_description.empty() ? "." : ": " + fields->format_description;
  return out;
}

std::string SimulatedBackend::answer(const ChatRequest& request, std::mt19937_64& rng) const {
  const auto format = prompts::find_format_marker(system_text(request));
  const std::string format_name = format.value_or(std::string(kOriginalFormat));
  const auto qid = question_id(request.messages.back().content);
  const auto& label = draw(profile_.answers_for(format_name, qid), rng).label;

  std::string out;
  if (format) out += std::string(prompts::kFormatMarker) + *format + "\n";
  out += "Working through the question step by step.\n";
  if (label == ensemble::kNoAnswer) {
    out += "I am unable to determine the answer.";
  } else {
    out += "The final answer is " + label + ".";
  }
  return out;
}

std::string SimulatedBackend::judge(const std::string& user, std::mt19937_64& rng) const {
  const auto fields = prompts::parse_judge_prompt(user);
  std::string format_name(kOriginalFormat);
  std::string qid;
  if (fields) {
    format_name = prompts::find_format_marker(fields->answer).value_or(format_name);
    qid = question_id(fields->question);
  }
  const int score = draw(profile_.scores_for(format_name, qid), rng).score;
  return "The response follows a coherent line of reasoning.\nRating: [[" + std::to_string(score) +
         "]]";
}

ChatResponse SimulatedBackend::send(const ChatRequest& request) {
  request.validate();
  std::mt19937_64 rng(stable_hash64(std::to_string(profile_.seed) + "\n" + json(request).dump()));
  const auto system = system_text(request);
  const auto& user = request.messages.back().content;

  ChatResponse response;
  response.backend = llm::BackendKind::simulated;
  if (starts_with(system, prompts::kFormatGenerationHeader)) {
    response.text = format_listing(user, false);
  } else if (starts_with(system, prompts::kSupplementaryHeader)) {
    response.text = format_listing(user, true);
  } else if (starts_with(system, prompts::kRewriteHeader)) {
    response.text = rewrite(user);
  } else if (starts_with(system, prompts::kJudgeHeader)) {
    response.text = judge(user, rng);
  } else {
    response.text = answer(request, rng);
  }
  for (const auto& m : request.messages) response.prompt_tokens += llm::approximate_tokens(m.content);
  response.completion_tokens = llm::approximate_tokens(response.text);
  return response;
}

// ---------------------------------------------------------------------------

void from_json(const json& j, ScenarioFormat& f) {
  f.category = j.value("category", std::string("General"));
  f.name = j.at("name").get<std::string>();
  f.description = j.value("description", std::string());
  f.accuracy = j.value("accuracy", 0.5);
  f.systematic_error = j.value("systematic_error", false);
  f.answer_noise = j.value("answer_noise", 0.0);
  f.score_if_correct = j.value("score_if_correct", 8);
  f.score_if_wrong = j.value("score_if_wrong", 4);
  f.score_spread = j.value("score_spread", 1);
}

void from_json(const json& j, Scenario& s) {
  s.seed = j.value("seed", std::uint64_t{1});
  s.questions = j.value("questions", std::size_t{20});
  s.answer_kind = answer_kind_from_string(j.value("answer_kind", std::string("numeric")));
  s.wrong_labels = j.value("wrong_labels", std::size_t{4});
  s.formats = j.at("formats").get<std::vector<ScenarioFormat>>();
  if (j.contains("original") && !j["original"].is_null()) {
    auto original = j["original"];
    if (!original.contains("name")) original["name"] = std::string(kOriginalFormat);
    s.original = original.get<ScenarioFormat>();
  }
  if (j.contains("task") && !j["task"].is_null()) s.task = j["task"].get<TaskSpec>();
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::config, "cannot open scenario " + path.string());
  try {
    return json::parse(in).get<Scenario>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::validation, "invalid scenario " + path.string() + ": " + e.what());
  }
}

namespace {

TaskSpec default_task(AnswerKind kind) {
  TaskSpec t;
  t.answer_kind = kind;
  switch (kind) {
    case AnswerKind::numeric:
      t.name = "synthetic-arithmetic";
      t.definition = "Answer arithmetic word problems with a single number.";
      t.example_question = "A box holds 12 pens. How many pens are in 3 boxes?";
      t.example_answer = "36";
      t.original_instruction =
          "Solve the problem. Reason step by step and end with \"The final answer is <number>.\"";
      break;
    case AnswerKind::multiple_choice:
      t.name = "synthetic-choice";
      t.definition = "Answer multiple-choice science questions with one option letter.";
      t.example_question = "Which gas do plants absorb?\nOptions:\n(A) Oxygen\n(B) Carbon dioxide";
      t.example_answer = "B";
      t.original_instruction =
          "Answer the question. Reason step by step and end with \"The final answer is <letter>.\"";
      break;
    case AnswerKind::free_text:
      t.name = "synthetic-short-answer";
      t.definition = "Answer factual questions with a short phrase.";
      t.example_question = "What is the capital of France?";
      t.example_answer = "Paris";
      t.original_instruction =
          "Answer the question. Reason briefly and end with \"The final answer is <answer>.\"";
      break;
  }
  return t;
}

std::vector<std::string> wrong_pool(const std::string& gold, AnswerKind kind, std::size_t size,
                                    std::size_t index, std::mt19937_64& rng) {
  std::vector<std::string> pool;
  switch (kind) {
    case AnswerKind::numeric: {
      const long long g = std::stoll(gold);
      std::set<long long> used{g};
      while (pool.size() < size) {
        const long long offset = static_cast<long long>(uniform_index(rng, 40)) - 20;
        const long long candidate = g + (offset == 0 ? 21 : offset);
        if (candidate <= 0 || !used.insert(candidate).second) continue;
        pool.push_back(std::to_string(candidate));
      }
      break;
    }
    case AnswerKind::multiple_choice:
      for (char c : std::string("ABCD")) {
        if (std::string(1, c) != gold && pool.size() < std::min<std::size_t>(size, 3)) {
          pool.emplace_back(1, c);
        }
      }
      break;
    case AnswerKind::free_text:
      for (std::size_t k = 0; k < size; ++k) {
        pool.push_back("decoy " + std::to_string(index) + "-" + std::to_string(k + 1));
      }
      break;
  }
  return pool;
}

Distribution format_distribution(const ScenarioFormat& f, const std::string& gold,
                                 const std::vector<std::string>& pool, std::mt19937_64& rng) {
  const bool correct = unit_uniform(rng) < f.accuracy;
  std::string mode = gold;
  if (!correct) {
    if (f.systematic_error || pool.size() == 1) {
      mode = pool.front();
    } else {
      mode = pool[1 + uniform_index(rng, pool.size() - 1)];
    }
  }

  Distribution d;
  if (f.answer_noise <= 0.0) {
    d.answers.push_back({mode, 1.0});
  } else {
    std::vector<std::string> others;
    if (mode != gold) others.push_back(gold);
    for (const auto& w : pool) {
      if (w != mode) others.push_back(w);
    }
    d.answers.push_back({mode, 1.0 - f.answer_noise});
    for (const auto& o : others) {
      d.answers.push_back({o, f.answer_noise / static_cast<double>(others.size())});
    }
  }

  const int centre = correct ? f.score_if_correct : f.score_if_wrong;
  const int lo = std::clamp(centre - f.score_spread, 1, 10);
  const int hi = std::clamp(centre + f.score_spread, 1, 10);
  for (int s = lo; s <= hi; ++s) {
    d.scores.push_back({s, 1.0 / static_cast<double>(hi - lo + 1)});
  }
  return d;
}

}  // namespace

ScenarioBundle expand_scenario(const Scenario& scenario, const std::optional<Dataset>& questions) {
  if (scenario.formats.empty()) {
    throw Error(ErrorCode::validation, "scenario declares no formats");
  }
  if (scenario.wrong_labels < 1) {
    throw Error(ErrorCode::validation, "scenario needs at least one wrong label per question");
  }
  std::mt19937_64 rng(scenario.seed);
  ScenarioBundle bundle;
  bundle.task = scenario.task.value_or(default_task(scenario.answer_kind));
  bundle.task.answer_kind = scenario.answer_kind;

  if (questions) {
    bundle.dataset = *questions;
  } else {
    for (std::size_t i = 1; i <= scenario.questions; ++i) {
      DatasetRecord r;
      char id[16];
      std::snprintf(id, sizeof id, "q%03zu", i);
      r.id = id;
      switch (scenario.answer_kind) {
        case AnswerKind::numeric: {
          const auto a = 2 + uniform_index(rng, 60);
          const auto b = 2 + uniform_index(rng, 15);
          r.question = "Synthetic problem " + std::to_string(i) + ": a crate holds " +
                       std::to_string(a) + " items. How many items are in " + std::to_string(b) +
                       " crates?";
          r.gold = ensemble::AnswerLabel(std::to_string(a * b));
          break;
        }
        case AnswerKind::multiple_choice:
          r.question = "Synthetic question " + std::to_string(i) + ": which option is correct?";
          r.choices = std::vector<std::string>{"first", "second", "third", "fourth"};
          r.gold = ensemble::AnswerLabel(std::string(1, static_cast<char>('A' + uniform_index(rng, 4))));
          break;
        case AnswerKind::free_text:
          r.question = "Synthetic question " + std::to_string(i) + ": name the hidden word.";
          r.gold = ensemble::AnswerLabel("word " + std::to_string(i));
          break;
      }
      bundle.dataset.push_back(std::move(r));
    }
  }

  auto& profile = bundle.profile;
  profile.seed = scenario.seed;
  profile.defaults.answers = {{std::string(ensemble::kNoAnswer), 1.0}};
  profile.defaults.scores = {{5, 1.0}};
  for (const auto& f : scenario.formats) profile.formats.push_back({f.category, f.name, f.description});

  for (std::size_t qi = 0; qi < bundle.dataset.size(); ++qi) {
    const auto& record = bundle.dataset[qi];
    const auto pool = wrong_pool(record.gold.value(), scenario.answer_kind, scenario.wrong_labels,
                                 qi + 1, rng);
    for (const auto& f : scenario.formats) {
      profile.entries[{f.name, record.id}] = format_distribution(f, record.gold.value(), pool, rng);
    }
    if (scenario.original) {
      profile.entries[{std::string(kOriginalFormat), record.id}] =
          format_distribution(*scenario.original, record.gold.value(), pool, rng);
    }
  }
  profile.validate();
  return bundle;
}

}  // namespace format_adapter::sim
