#include "cges/error.hpp"

namespace cges {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidCandidateCount: return "invalid-candidate-count";
        case ErrorCode::EmptyInput: return "empty-input";
        case ErrorCode::ContradictoryHypotheses: return "contradictory-hypotheses";
        case ErrorCode::InvalidConfidence: return "invalid-confidence";
        case ErrorCode::EmptyResponse: return "empty-response";
        case ErrorCode::Configuration: return "configuration";
        case ErrorCode::InvalidScore: return "invalid-score";
        case ErrorCode::UnsupportedClosedForm: return "unsupported-closed-form";
        case ErrorCode::SamplerFailure: return "sampler-failure";
        case ErrorCode::ReplayMiss: return "replay-miss";
        case ErrorCode::DuplicateRecord: return "duplicate-record";
        case ErrorCode::KeyMismatch: return "key-mismatch";
        case ErrorCode::Io: return "io";
        case ErrorCode::Parse: return "parse";
    }
    return "unknown";
}

} // namespace cges
