#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cges {

/// Half-open token index range [begin, end).
struct TokenRange {
    std::size_t begin = 0;
    std::size_t end = 0;
};

/// Token probabilities of one generated response, optionally split into
/// reasoning steps with an importance score per step.
struct TokenizedResponse {
    std::vector<double> token_probs;
    std::vector<TokenRange> step_boundaries;   // empty means one step over all tokens
    std::vector<double> step_importance;       // empty means not supplied
    std::optional<TokenRange> answer_span;     // tokens of the final answer, if known
};

enum class Estimator { LnsArithmetic, LnsGeometric, MarsStepwise, RewardPassthrough };

std::string_view to_string(Estimator estimator);
/// Accepts the CLI names: lns-arith, lns-geo, mars, rm.
Estimator parse_estimator(std::string_view name);

inline constexpr double kDefaultClampEpsilon = 1e-6;

struct ConfidenceConfig {
    Estimator estimator = Estimator::LnsArithmetic;
    double clamp_epsilon = kDefaultClampEpsilon;
    /// Restrict LNS to the answer span when the response carries one.
    bool answer_span_only = false;
};

double clamp_confidence(double value, double epsilon = kDefaultClampEpsilon);

/// exp(mean log p), clamped.
double lns_geometric(const TokenizedResponse& tr, double epsilon = kDefaultClampEpsilon);
/// mean p, clamped.
double lns_arithmetic(const TokenizedResponse& tr, double epsilon = kDefaultClampEpsilon);

/// Step weights 1/(2S) + u_s/2 with u normalized to sum to one (uniform when
/// every importance is zero).
std::vector<double> mars_step_weights(std::span<const double> importance);

/// Step-wise MARS: weighted geometric mean of per-step probabilities, where a
/// step's probability is the geometric mean of its tokens.
double mars_stepwise(const TokenizedResponse& tr, double epsilon = kDefaultClampEpsilon);

/// Uses an external score (e.g. a reward model) as the confidence, clamped.
double reward_passthrough(double score, double epsilon = kDefaultClampEpsilon);

/// Dispatches on `config.estimator`. RewardPassthrough requires `reward_score`.
double estimate_confidence(const TokenizedResponse& tr, const ConfidenceConfig& config,
                           std::optional<double> reward_score = std::nullopt);

} // namespace cges
