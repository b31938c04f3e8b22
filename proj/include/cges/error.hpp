#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cges {

enum class ErrorCode {
    InvalidCandidateCount,
    EmptyInput,
    ContradictoryHypotheses,
    InvalidConfidence,
    EmptyResponse,
    Configuration,
    InvalidScore,
    UnsupportedClosedForm,
    SamplerFailure,
    ReplayMiss,
    DuplicateRecord,
    KeyMismatch,
    Io,
    Parse,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library; the code distinguishes failure classes.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace cges
