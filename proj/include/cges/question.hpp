#pragma once

#include <string>
#include <string_view>

namespace cges {

enum class AnswerFormat { BoxedMath, LetterChoice };

std::string_view to_string(AnswerFormat format);
/// Accepts "boxed" / "boxed-math" and "letter" / "letter-choice".
AnswerFormat parse_answer_format(std::string_view name);

struct Question {
    std::string id;
    std::string prompt;
    AnswerFormat format = AnswerFormat::BoxedMath;
    std::string gold;   // empty when unknown
};

/// Trims and collapses internal whitespace runs to a single space.
std::string collapse_whitespace(std::string_view text);

} // namespace cges
