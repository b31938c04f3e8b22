#include "cges/confidence.hpp"

#include "cges/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cges {

namespace {

void check_epsilon(double epsilon) {
    if (!(epsilon > 0.0 && epsilon < 0.5)) {
        throw Error(ErrorCode::Configuration, "clamp epsilon must lie in (0, 0.5)");
    }
}

std::span<const double> checked_tokens(std::span<const double> probs) {
    if (probs.empty()) {
        throw Error(ErrorCode::EmptyResponse, "response has no token probabilities");
    }
    for (double p : probs) {
        if (!std::isfinite(p) || p < 0.0 || p > 1.0) {
            throw Error(ErrorCode::Configuration,
                        "token probability outside [0,1]: " + std::to_string(p));
        }
    }
    return probs;
}

double mean_log(std::span<const double> probs) {
    double sum = 0.0;
    for (double p : probs) {
        sum += std::log(p);
    }
    return sum / static_cast<double>(probs.size());
}

std::vector<TokenRange> resolved_steps(const TokenizedResponse& tr) {
    std::size_t length = tr.token_probs.size();
    if (tr.step_boundaries.empty()) {
        return {TokenRange{0, length}};
    }
    std::size_t expected_begin = 0;
    for (const auto& step : tr.step_boundaries) {
        if (step.begin != expected_begin || step.end <= step.begin || step.end > length) {
            throw Error(ErrorCode::Configuration,
                        "step boundaries must partition the token sequence into non-empty steps");
        }
        expected_begin = step.end;
    }
    if (expected_begin != length) {
        throw Error(ErrorCode::Configuration, "step boundaries do not cover every token");
    }
    return tr.step_boundaries;
}

} // namespace

std::string_view to_string(Estimator estimator) {
    switch (estimator) {
        case Estimator::LnsArithmetic: return "lns-arith";
        case Estimator::LnsGeometric: return "lns-geo";
        case Estimator::MarsStepwise: return "mars";
        case Estimator::RewardPassthrough: return "rm";
    }
    return "unknown";
}

Estimator parse_estimator(std::string_view name) {
    for (auto e : {Estimator::LnsArithmetic, Estimator::LnsGeometric, Estimator::MarsStepwise,
                   Estimator::RewardPassthrough}) {
        if (to_string(e) == name) {
            return e;
        }
    }
    throw Error(ErrorCode::Configuration,
                "unknown estimator '" + std::string(name) + "' (expected lns-arith, lns-geo, mars, rm)");
}

double clamp_confidence(double value, double epsilon) {
    check_epsilon(epsilon);
    return std::clamp(value, epsilon, 1.0 - epsilon);
}

double lns_geometric(const TokenizedResponse& tr, double epsilon) {
    auto probs = checked_tokens(tr.token_probs);
    return clamp_confidence(std::exp(mean_log(probs)), epsilon);
}

double lns_arithmetic(const TokenizedResponse& tr, double epsilon) {
    auto probs = checked_tokens(tr.token_probs);
    double sum = std::accumulate(probs.begin(), probs.end(), 0.0);
    return clamp_confidence(sum / static_cast<double>(probs.size()), epsilon);
}

std::vector<double> mars_step_weights(std::span<const double> importance) {
    if (importance.empty()) {
        throw Error(ErrorCode::Configuration, "MARS needs at least one step");
    }
    double total = 0.0;
    for (double u : importance) {
        if (!std::isfinite(u) || u < 0.0) {
            throw Error(ErrorCode::Configuration, "step importance must be finite and non-negative");
        }
        total += u;
    }
    auto steps = static_cast<double>(importance.size());
    std::vector<double> weights;
    weights.reserve(importance.size());
    for (double u : importance) {
        double normalized = total > 0.0 ? u / total : 1.0 / steps;
        weights.push_back(0.5 / steps + 0.5 * normalized);
    }
    return weights;
}

double mars_stepwise(const TokenizedResponse& tr, double epsilon) {
    auto probs = checked_tokens(tr.token_probs);
    auto steps = resolved_steps(tr);
    if (tr.step_importance.empty()) {
        throw Error(ErrorCode::Configuration,
                    "MARS requires step importance scores; supply them or choose lns-arith/lns-geo");
    }
    if (tr.step_importance.size() != steps.size()) {
        throw Error(ErrorCode::Configuration,
                    "step importance has " + std::to_string(tr.step_importance.size()) +
                        " entries for " + std::to_string(steps.size()) + " steps");
    }
    auto weights = mars_step_weights(tr.step_importance);
    double log_score = 0.0;
    for (std::size_t s = 0; s < steps.size(); ++s) {
        auto step = probs.subspan(steps[s].begin, steps[s].end - steps[s].begin);
        log_score += weights[s] * mean_log(step);
    }
    return clamp_confidence(std::exp(log_score), epsilon);
}

double reward_passthrough(double score, double epsilon) {
    if (!std::isfinite(score)) {
        throw Error(ErrorCode::InvalidScore, "reward score must be finite");
    }
    return clamp_confidence(score, epsilon);
}

double estimate_confidence(const TokenizedResponse& tr, const ConfidenceConfig& config,
                           std::optional<double> reward_score) {
    check_epsilon(config.clamp_epsilon);
    if (config.estimator == Estimator::RewardPassthrough) {
        if (!reward_score) {
            throw Error(ErrorCode::Configuration, "reward-model confidence needs a reward score");
        }
        return reward_passthrough(*reward_score, config.clamp_epsilon);
    }

    const TokenizedResponse* source = &tr;
    TokenizedResponse span_only;
    if (config.answer_span_only && tr.answer_span && config.estimator != Estimator::MarsStepwise) {
        auto span = *tr.answer_span;
        if (span.end <= span.begin || span.end > tr.token_probs.size()) {
            throw Error(ErrorCode::Configuration, "answer span is outside the token sequence");
        }
        span_only.token_probs.assign(tr.token_probs.begin() + static_cast<std::ptrdiff_t>(span.begin),
                                     tr.token_probs.begin() + static_cast<std::ptrdiff_t>(span.end));
        source = &span_only;
    }

    switch (config.estimator) {
        case Estimator::LnsArithmetic: return lns_arithmetic(*source, config.clamp_epsilon);
        case Estimator::LnsGeometric: return lns_geometric(*source, config.clamp_epsilon);
        case Estimator::MarsStepwise: return mars_stepwise(*source, config.clamp_epsilon);
        case Estimator::RewardPassthrough: break;
    }
    throw Error(ErrorCode::Configuration, "unhandled estimator");
}

} // namespace cges
