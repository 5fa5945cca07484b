#pragma once

#include <string_view>

#include "format_adapter/ensemble_math.hpp"

namespace format_adapter {
enum class AnswerKind;
}

namespace format_adapter::eval {

// Canonical form used for exact match. Trims, case-folds, strips surrounding
// quotes and trailing '.'/','. Numeric answers lose thousands separators,
// trailing fractional zeros and a leading '+', and integer fractions are
// reduced ("6/2" -> "3"). Multiple-choice letters lose parentheses and are
// upper-cased. Text that normalizes to nothing becomes the no-answer label.
// Idempotent.
ensemble::AnswerLabel normalize(std::string_view label, AnswerKind kind);

// String equality, except that the no-answer label never matches.
bool exact_match(const ensemble::AnswerLabel& pred, const ensemble::AnswerLabel& gold);

}  // namespace format_adapter::eval
