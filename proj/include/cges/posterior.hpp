#pragma once

// Bayesian aggregation of (answer, confidence) samples under the one-versus-rest
// likelihood: a sample's label gets likelihood C under the hypothesis that it is
// correct, and (1 - C) / (K - 1) under every other hypothesis.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cges {

/// One observation (R_t, C_t). `round` is 1-based.
struct Sample {
    std::string label;
    double confidence = 0.5;
    int round = 1;
};

enum class KPolicyKind { FixedK, ObservedPlusVirtual };

/// How the hypothesis count K is chosen.
///
/// FixedK uses a known K (e.g. the option count of a multiple-choice task).
/// ObservedPlusVirtual uses K = distinct observed labels + 1, where the extra
/// hypothesis is a virtual candidate that can never be predicted.
struct KPolicy {
    KPolicyKind kind = KPolicyKind::ObservedPlusVirtual;
    int k = 0;

    static KPolicy fixed(int k) { return {KPolicyKind::FixedK, k}; }
    static KPolicy observed_plus_virtual() { return {KPolicyKind::ObservedPlusVirtual, 0}; }

    /// Parses "fixed:K" or "observed+virtual".
    static KPolicy parse(std::string_view text);
    std::string to_string() const;
};

/// Ordered set of distinct answer labels plus the K policy.
class CandidateSet {
public:
    explicit CandidateSet(KPolicy policy = KPolicy::observed_plus_virtual());
    CandidateSet(KPolicy policy, std::vector<std::string> labels);

    /// Appends `label` if absent. Returns its position.
    /// Throws InvalidCandidateCount if a FixedK set would exceed K labels.
    std::size_t add(const std::string& label);

    std::optional<std::size_t> find(std::string_view label) const;
    const std::vector<std::string>& labels() const noexcept { return labels_; }
    std::size_t size() const noexcept { return labels_.size(); }
    const KPolicy& policy() const noexcept { return policy_; }

    /// Number of hypotheses used by the likelihood kernel.
    int effective_k() const noexcept;

    /// Hypotheses that carry no label: the virtual candidate, or the unnamed
    /// slots of a FixedK set with fewer than K labels.
    int unlabeled_count() const noexcept;

private:
    KPolicy policy_;
    std::vector<std::string> labels_;
};

struct CandidateMass {
    std::string label;
    double log_unnormalized = 0.0;
    double mass = 0.0;
};

/// Normalized posterior over candidates, in candidate insertion order.
///
/// `virtual_mass` is the total mass on unlabeled hypotheses (see
/// CandidateSet::unlabeled_count); `virtual_log_unnormalized` is the log score
/// of each one of them. Masses plus virtual_mass sum to one.
struct PosteriorVector {
    std::vector<CandidateMass> candidates;
    double virtual_mass = 0.0;
    double virtual_log_unnormalized = 0.0;
    int virtual_count = 0;
    int effective_k = 0;

    std::optional<double> mass(std::string_view label) const;
};

struct TopCandidate {
    std::string label;
    double mass = 0.0;
};

/// log P(R_t | C_t, hypothesis).
double log_likelihood(const Sample& sample, bool hypothesis_matches, int effective_k);

/// Incremental form of score(). Keeps per-label sufficient statistics so that the
/// posterior can be read after every appended sample, and stays exact when K
/// grows under ObservedPlusVirtual.
class ScoreAccumulator {
public:
    explicit ScoreAccumulator(CandidateSet candidates);

    void add(const Sample& sample);
    std::size_t sample_count() const noexcept { return count_; }
    const CandidateSet& candidates() const noexcept { return candidates_; }

    /// Log of the unnormalized score s_a for the candidate at `index`.
    double log_score(std::size_t index) const;
    /// Log score of one unlabeled hypothesis (matches no sample).
    double unlabeled_log_score() const;

    PosteriorVector posterior() const;

private:
    double log_score(std::size_t index, double log_km1) const;

    struct LabelStats {
        double sum_log_c = 0.0;
        double sum_log_1mc = 0.0;
        std::size_t count = 0;
    };

    CandidateSet candidates_;
    std::vector<LabelStats> stats_;
    double sum_log_1mc_ = 0.0;
    std::size_t count_ = 0;
};

/// Posterior over candidates after all samples (normalized, log-space).
/// Sample labels missing from `candidates` are appended in sample order.
PosteriorVector score(std::span<const Sample> samples, CandidateSet candidates);

/// Highest-mass labeled candidate; ties go to the earliest-inserted label.
TopCandidate top(const PosteriorVector& posterior);

/// Per-sample log-likelihood ratio between hypothesis i and hypothesis k.
double llr_increment(const Sample& sample, bool i_matches, bool k_matches, int effective_k);

} // namespace cges
