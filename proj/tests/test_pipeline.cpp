#include <deque>
#include <functional>
#include <map>

#include "doctest.h"

#include "format_adapter/error.hpp"
#include "format_adapter/gateway.hpp"
#include "format_adapter/normalize.hpp"
#include "format_adapter/pipeline.hpp"
#include "format_adapter/prompts.hpp"

using namespace format_adapter;
using namespace format_adapter::pipeline;

namespace {

class FunctionBackend : public llm::Backend {
 public:
  using Handler = std::function<std::string(const llm::ChatRequest&)>;
  explicit FunctionBackend(Handler h) : handler_(std::move(h)) {}

  llm::ChatResponse send(const llm::ChatRequest& request) override {
    ++calls;
    requests.push_back(request);
    llm::ChatResponse r;
    r.text = handler_(request);
    r.prompt_tokens = 5;
    r.completion_tokens = 5;
    return r;
  }
  llm::BackendKind kind() const override { return llm::BackendKind::simulated; }

  int calls = 0;
  std::vector<llm::ChatRequest> requests;

 private:
  Handler handler_;
};

// Replies from a fixed list, repeating the last reply once it runs out.
FunctionBackend::Handler script(std::vector<std::string> replies) {
  auto queue = std::make_shared<std::deque<std::string>>(replies.begin(), replies.end());
  return [queue](const llm::ChatRequest&) {
    auto next = queue->front();
    if (queue->size() > 1) queue->pop_front();
    return next;
  };
}

struct Harness {
  explicit Harness(FunctionBackend::Handler h)
      : backend(std::make_shared<FunctionBackend>(std::move(h))),
        gateway(backend, llm::GatewayOptions{}) {
    gateway.begin_run("t");
  }
  StageClient client() { return {gateway, "t"}; }

  std::shared_ptr<FunctionBackend> backend;
  llm::Gateway gateway;
};

TaskSpec arithmetic_task() {
  TaskSpec t;
  t.name = "arithmetic";
  t.definition = "Solve arithmetic word problems.";
  t.example_question = "What is 2 + 3?";
  t.example_answer = "5";
  t.original_instruction = "Solve the problem and end with \"The final answer is X.\"";
  t.answer_kind = AnswerKind::numeric;
  return t;
}

const char* kTwoCategoryListing = R"(1. Category: Natural Language
   - Format: English — plain English sentences
   - Format: Chinese — reason in Chinese
2. **Category: Programming**
   - Format: **Python** - write a Python program
   - Format: Pseudocode -- numbered pseudocode steps
)";

GenerationOptions options(std::size_t target, int supplementary = 2) {
  GenerationOptions o;
  o.model_id = "m";
  o.target_count = target;
  o.supplementary_calls = supplementary;
  return o;
}

}  // namespace

TEST_CASE("outline listing with two categories") {
  const auto formats = parse_format_listing(kTwoCategoryListing);
  REQUIRE(formats.size() == 4);
  CHECK(formats[0].category == "Natural Language");
  CHECK(formats[0].name == "English");
  CHECK(formats[0].description == "plain English sentences");
  CHECK(formats[2].category == "Programming");
  CHECK(formats[2].name == "Python");
  CHECK(formats[3].description == "numbered pseudocode steps");
  CHECK(formats[1].id == format_id("Natural Language", "Chinese"));
}

TEST_CASE("duplicate formats collapse to one") {
  const auto formats = parse_format_listing(
      "1. Category: Natural Language\n - Format: English - a\n - Format: english - b\n");
  REQUIRE(formats.size() == 1);
  CHECK(formats[0].description == "a");
}

TEST_CASE("json listing fallback") {
  const auto formats = parse_format_listing(
      R"(Here you go: {"categories": [{"category": "Programming", "formats": [{"name": "Python", "description": "code"}, {"name": "SQL", "description": "queries"}]}]})");
  REQUIRE(formats.size() == 2);
  CHECK(formats[1].category == "Programming");
  CHECK(formats[1].name == "SQL");
  CHECK(parse_format_listing("no structure at all").empty());
}

TEST_CASE("format generation from a listing") {
  Harness h(script({kTwoCategoryListing}));
  const auto set = generate_formats(h.client(), arithmetic_task(), options(4));
  CHECK(set.formats.size() == 4);
  CHECK(h.backend->calls == 1);
  CHECK_NOTHROW(set.validate());
}

TEST_CASE("format generation truncates to the target") {
  Harness h(script({kTwoCategoryListing}));
  CHECK(generate_formats(h.client(), arithmetic_task(), options(3)).formats.size() == 3);
}

TEST_CASE("supplementary calls fill a short listing") {
  Harness h(script({"1. Category: Natural Language\n - Format: English - plain\n",
                    "1. Category: Natural Language\n - Format: English - dup\n"
                    "2. Category: Notation\n - Format: Equations - only equations\n"}));
  const auto set = generate_formats(h.client(), arithmetic_task(), options(3));
  CHECK(set.formats.size() == 2);
  CHECK(h.backend->calls == 3);
  const auto& supplementary = h.backend->requests[1].messages.front().content;
  CHECK(supplementary.rfind(std::string(prompts::kSupplementaryHeader), 0) == 0);
}

TEST_CASE("empty generation reply fails") {
  Harness h(script({"   "}));
  try {
    generate_formats(h.client(), arithmetic_task(), options(4));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::generation_failed);
  }
}

TEST_CASE("unparseable listing fails after retries and keeps the reply") {
  Harness h(script({"I would rather not."}));
  try {
    generate_formats(h.client(), arithmetic_task(), options(4));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::parse);
    CHECK(std::string(e.what()).find("I would rather not.") != std::string::npos);
  }
  CHECK(h.backend->calls == 3);
  // each retry uses a different seed
  CHECK(h.backend->requests[1].seed != h.backend->requests[2].seed);
}

TEST_CASE("a parse failure after a good first listing is not fatal") {
  Harness h(script({"1. Category: A\n - Format: One - x\n", "nothing useful"}));
  const auto set = generate_formats(h.client(), arithmetic_task(), options(5, 1));
  CHECK(set.formats.size() == 1);
}

TEST_CASE("rewrite returns the trimmed instruction") {
  Harness h([](const llm::ChatRequest& r) {
    const auto fields = prompts::parse_rewrite_prompt(r.messages.back().content);
    REQUIRE(fields.has_value());
    return "\n  Reason entirely in " + fields->format_name + ". End with the final answer.  \n";
  });
  ReasoningFormat f{format_id("Natural Language", "Chinese"), "Natural Language", "Chinese",
                    "reason in Chinese", std::nullopt};
  const auto text = rewrite_instruction(h.client(), arithmetic_task(), f, "m");
  CHECK(text == "Reason entirely in Chinese. End with the final answer.");
}

TEST_CASE("identity rewrite is accepted") {
  const auto task = arithmetic_task();
  Harness h([&](const llm::ChatRequest&) { return task.original_instruction; });
  ReasoningFormat f{"a--b", "A", "B", "", std::nullopt};
  CHECK(rewrite_instruction(h.client(), task, f, "m") == task.original_instruction);
}

TEST_CASE("rewrite errors name the format") {
  ReasoningFormat f{"programming--python", "Programming", "Python", "", std::nullopt};
  {
    Harness h([](const llm::ChatRequest&) -> std::string {
      throw TransportError("upstream unavailable", 5, 503);
    });
    try {
      rewrite_instruction(h.client(), arithmetic_task(), f, "m");
      FAIL("expected an error");
    } catch (const TransportError& e) {
      CHECK(std::string(e.what()).find("programming--python") != std::string::npos);
      CHECK(e.attempts() == 5);
      CHECK(e.http_status() == 503);
    }
  }
  {
    Harness h(script({""}));
    try {
      rewrite_instruction(h.client(), arithmetic_task(), f, "m");
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::rewrite);
    }
  }
  {
    Harness h(script({"x"}));
    auto done = f;
    done.rewritten_instruction = "already";
    CHECK_THROWS_AS(rewrite_instruction(h.client(), arithmetic_task(), done, "m"), Error);
    CHECK(h.backend->calls == 0);
  }
}

TEST_CASE("answer extraction") {
  auto label = [](std::string_view text, AnswerKind kind) {
    return extract_answer(text, kind).label.value();
  };
  CHECK(label("6/2=3. The final answer is 3.", AnswerKind::numeric) == "3");
  CHECK(label("Answer: B", AnswerKind::multiple_choice) == "B");
  CHECK(label("so the answer is (c).", AnswerKind::multiple_choice) == "C");
  CHECK(label("I cannot solve this.", AnswerKind::numeric) == ensemble::kNoAnswer);
  CHECK_FALSE(extract_answer("I cannot solve this.", AnswerKind::numeric).found);
  CHECK(label("The answer is 5. Wait, recheck: the final answer is 7.", AnswerKind::numeric) == "7");
  CHECK(label("Thus $\\boxed{1,234}$", AnswerKind::numeric) == "1234");
  CHECK(label("\\boxed{\\frac{6}{2}}", AnswerKind::numeric) == "3");
  CHECK(label("We get 4 then 12 then 15", AnswerKind::numeric) == "15");
  CHECK(label("The final answer is: Paris.\nThanks", AnswerKind::free_text) == "paris");
  CHECK(label("Paris", AnswerKind::free_text) == "paris");
}

TEST_CASE("extraction output is already normalized") {
  for (const auto* text : {"The final answer is 1,200.", "answer: +42.50", "\\boxed{-3}",
                           "Answer: (d)", "nothing"}) {
    for (auto kind : {AnswerKind::numeric, AnswerKind::multiple_choice, AnswerKind::free_text}) {
      const auto once = extract_answer(text, kind).label;
      CHECK(eval::normalize(once.value(), kind) == once);
    }
  }
}

TEST_CASE("answer records hash the raw text") {
  const auto r = make_answer_record("q1", "f1", "The final answer is 3.", AnswerKind::numeric);
  CHECK(r.answer.value() == "3");
  CHECK_FALSE(r.no_answer);
  CHECK(r.raw_text_ref.size() == 64);
  const json j = r;
  const auto back = j.get<AnswerRecord>();
  CHECK(back.raw_text_ref == r.raw_text_ref);
  CHECK(back.answer == r.answer);
  CHECK(make_answer_record("q1", "f1", "no idea", AnswerKind::numeric).no_answer);
}

TEST_CASE("self-consistency sampling") {
  Harness h([](const llm::ChatRequest& r) {
    // seeds 0..2 answer 3, seeds 3..4 answer 4
    return std::string("The final answer is ") + (*r.seed < 3 ? "3." : "4.");
  });
  const auto samples =
      self_consistency_answers(h.client(), arithmetic_task(), "What is 6/2?", 5, 0, "m");
  REQUIRE(samples.size() == 5);
  std::map<std::string, int> counts;
  for (const auto& s : samples) {
    REQUIRE(s.text.has_value());
    ++counts[extract_answer(*s.text, AnswerKind::numeric).label.value()];
  }
  CHECK(counts["3"] == 3);
  CHECK(counts["4"] == 2);
  for (const auto& req : h.backend->requests) {
    CHECK(req.temperature == doctest::Approx(kSamplingTemperature));
    CHECK(req.top_p == doctest::Approx(kSamplingTopP));
  }

  const auto single = self_consistency_answers(h.client(), arithmetic_task(), "q", 1, 10, "m");
  CHECK(single.size() == 1);
  CHECK(single[0].seed == 10);
}

TEST_CASE("self-consistency tolerates partial failure") {
  Harness partial([](const llm::ChatRequest& r) -> std::string {
    if (*r.seed == 1) throw TransportError("boom", 1, 500);
    return "The final answer is 1.";
  });
  const auto samples =
      self_consistency_answers(partial.client(), arithmetic_task(), "q", 3, 0, "m");
  CHECK(samples[1].text == std::nullopt);
  CHECK_FALSE(samples[1].error.empty());
  CHECK(samples[2].text.has_value());

  Harness broken([](const llm::ChatRequest&) -> std::string {
    throw TransportError("boom", 1, 500);
  });
  CHECK_THROWS_AS(self_consistency_answers(broken.client(), arithmetic_task(), "q", 3, 0, "m"),
                  Error);
}
