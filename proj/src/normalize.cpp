#include "format_adapter/normalize.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>
#include <regex>
#include <string>

#include "format_adapter/task.hpp"
#include "format_adapter/util.hpp"

namespace format_adapter::eval {
namespace {

bool is_quote(char c) { return c == '"' || c == '\'' || c == '`'; }

std::string strip_generic(std::string s) {
  std::string prev;
  while (prev != s) {
    prev = s;
    s = trim(s);
    if (s.size() >= 2 && is_quote(s.front()) && s.front() == s.back()) {
      s = s.substr(1, s.size() - 2);
    }
    while (!s.empty() && (s.back() == '.' || s.back() == ',')) s.pop_back();
  }
  return s;
}

std::string canonical_decimal(const std::string& s) {
  std::string sign;
  std::string body = s;
  if (!body.empty() && (body[0] == '+' || body[0] == '-')) {
    if (body[0] == '-') sign = "-";
    body.erase(0, 1);
  }
  std::string int_part = body;
  std::string frac_part;
  if (const auto dot = body.find('.'); dot != std::string::npos) {
    int_part = body.substr(0, dot);
    frac_part = body.substr(dot + 1);
  }
  while (!frac_part.empty() && frac_part.back() == '0') frac_part.pop_back();
  const auto nz = int_part.find_first_not_of('0');
  int_part = nz == std::string::npos ? "0" : int_part.substr(nz);
  if (int_part == "0" && frac_part.empty()) sign.clear();
  return sign + int_part + (frac_part.empty() ? "" : "." + frac_part);
}

std::string reduce_fraction(const std::string& s, const std::smatch& m) {
  try {
    const bool negative = m[1].str() == "-";
    const unsigned long long num = std::stoull(m[2].str());
    const unsigned long long den = std::stoull(m[3].str());
    if (den == 0) return s;
    const auto g = std::gcd(num, den);
    const auto n = num / g;
    const auto d = den / g;
    const std::string sign = negative && n != 0 ? "-" : "";
    return d == 1 ? sign + std::to_string(n) : sign + std::to_string(n) + "/" + std::to_string(d);
  } catch (const std::out_of_range&) {
    return s;
  }
}

std::string normalize_numeric(std::string s) {
  static const std::regex thousands(R"(^[+-]?\d{1,3}(,\d{3})+(\.\d+)?$)");
  static const std::regex decimal(R"(^[+-]?\d+(\.\d*)?$)");
  static const std::regex fraction(R"(^([+-]?)(\d+)\s*/\s*(\d+)$)");
  s = to_lower(s);
  if (std::regex_match(s, thousands)) {
    s.erase(std::remove(s.begin(), s.end(), ','), s.end());
  }
  if (std::regex_match(s, decimal)) return canonical_decimal(s);
  std::smatch m;
  if (std::regex_match(s, m, fraction)) return reduce_fraction(s, m);
  return s;
}

std::string normalize_choice(std::string s) {
  std::string out;
  for (char c : s) {
    if (c == '(' || c == ')' || c == '[' || c == ']') continue;
    out.push_back(c);
  }
  return to_upper(trim(out));
}

std::string normalize_text(std::string s) {
  std::string out;
  bool space = false;
  for (unsigned char c : to_lower(s)) {
    if (std::isspace(c)) {
      space = true;
      continue;
    }
    if (space && !out.empty()) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(c));
  }
  return out;
}

std::string normalize_once(std::string s, AnswerKind kind) {
  s = strip_generic(std::move(s));
  switch (kind) {
    case AnswerKind::numeric: s = normalize_numeric(std::move(s)); break;
    case AnswerKind::multiple_choice: s = normalize_choice(std::move(s)); break;
    case AnswerKind::free_text: s = normalize_text(std::move(s)); break;
  }
  return strip_generic(std::move(s));
}

}  // namespace

ensemble::AnswerLabel normalize(std::string_view label, AnswerKind kind) {
  std::string s(label);
  if (iequals(trim(s), ensemble::kNoAnswer)) return ensemble::no_answer();
  // Iterate to a fixed point so that normalize(normalize(x)) == normalize(x).
  for (int i = 0; i < 8; ++i) {
    auto next = normalize_once(s, kind);
    if (next == s) break;
    s = std::move(next);
  }
  if (s.empty() || iequals(s, ensemble::kNoAnswer)) return ensemble::no_answer();
  return ensemble::AnswerLabel(std::move(s));
}

bool exact_match(const ensemble::AnswerLabel& pred, const ensemble::AnswerLabel& gold) {
  return !pred.is_no_answer() && pred == gold;
}

}  // namespace format_adapter::eval
