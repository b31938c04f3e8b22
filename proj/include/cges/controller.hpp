#pragma once

// Per-question sampling loops: confidence-guided early stopping (CGES) and the
// self-consistency (SC) and early-stopping self-consistency (ESC) baselines.
//
// All methods run in synchronous rounds over the batch. Within a round the
// sampler may be called for different questions concurrently (bounded by
// max_parallel); every question's samples are always drawn in round order, so
// results do not depend on the parallelism setting.

#include "cges/posterior.hpp"
#include "cges/question.hpp"

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cges {

enum class Method { CGES, SC, ESC };

std::string_view to_string(Method method);
Method parse_method(std::string_view name);

struct ControllerConfig {
    Method method = Method::CGES;
    double gamma = 0.95;
    int budget = 16;
    int esc_window = 4;
    KPolicy k_policy = KPolicy::observed_plus_virtual();
    int max_parallel = 1;
    /// Extra attempts after a failed sampler call before the run aborts.
    int max_retries = 3;

    /// Throws Configuration on out-of-range values.
    void validate() const;
};

/// Draws the sample for `question` at `round` (1-based). Throws on failure.
/// Must be safe to call concurrently for distinct questions.
using Sampler = std::function<Sample(const Question& question, int round)>;

struct QuestionOutcome {
    std::string question_id;
    std::string prediction;
    int calls = 0;
    /// CGES: top mass reached gamma. SC/ESC: always true.
    bool resolved = false;
    std::vector<Sample> samples;
    /// Bayesian posterior over all drawn samples (diagnostic for SC/ESC).
    PosteriorVector posterior;
};

struct RunResult {
    std::vector<QuestionOutcome> outcomes;   // batch order
    double avg_calls = 0.0;
    long total_calls = 0;

    const QuestionOutcome& outcome(std::string_view question_id) const;
};

RunResult cges_run(std::span<const Question> questions, const Sampler& sampler,
                   const ControllerConfig& config);

RunResult sc_run(std::span<const Question> questions, const Sampler& sampler,
                 const ControllerConfig& config);

RunResult esc_run(std::span<const Question> questions, const Sampler& sampler,
                  const ControllerConfig& config);

/// Dispatches on config.method.
RunResult run_method(std::span<const Question> questions, const Sampler& sampler,
                     const ControllerConfig& config);

/// Most frequent label; ties go to the label seen first.
std::string majority_vote(std::span<const Sample> samples);

} // namespace cges
