#include "cges/question.hpp"

#include "cges/error.hpp"

namespace cges {

std::string_view to_string(AnswerFormat format) {
    return format == AnswerFormat::BoxedMath ? "boxed" : "letter";
}

AnswerFormat parse_answer_format(std::string_view name) {
    if (name == "boxed" || name == "boxed-math") {
        return AnswerFormat::BoxedMath;
    }
    if (name == "letter" || name == "letter-choice") {
        return AnswerFormat::LetterChoice;
    }
    throw Error(ErrorCode::Configuration, "unknown answer format '" + std::string(name) + "'");
}

std::string collapse_whitespace(std::string_view text) {
    std::string out;
    bool pending_space = false;
    for (char c : text) {
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out += ' ';
            pending_space = false;
        }
        out += c;
    }
    return out;
}

} // namespace cges
