#pragma once

// Generative model behind the aggregator: a hidden correct index I, an answer
// distribution P over K candidates, and per-call (R_t, C_t) draws. Used to check
// empirically that the posterior concentrates on the truth when the LLR drift
// is positive, and moves away from it when the drift is negative.

#include "cges/posterior.hpp"

#include <cstdint>
#include <map>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace cges::gen {

using Rng = std::mt19937_64;

/// SplitMix64 mix of (seed, index); used for per-trial streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// Distribution of a confidence value on (0,1).
struct ConfidenceLaw {
    enum class Kind { Point, Uniform, Beta };
    Kind kind = Kind::Point;
    double a = 0.5;   // point value, uniform low, or beta alpha
    double b = 0.0;   // uniform high or beta beta

    static ConfidenceLaw point(double c) { return {Kind::Point, c, 0.0}; }
    static ConfidenceLaw uniform(double lo, double hi) { return {Kind::Uniform, lo, hi}; }
    static ConfidenceLaw beta(double alpha, double beta) { return {Kind::Beta, alpha, beta}; }

    /// "point:c", "uniform:lo,hi" or "beta:alpha,beta".
    static ConfidenceLaw parse(std::string_view text);
    std::string to_string() const;
    void validate() const;
    double draw(Rng& rng) const;
};

/// Distribution of the answer probabilities P on the K-simplex.
struct AnswerLaw {
    enum class Kind { Point, Dirichlet };
    Kind kind = Kind::Point;
    std::vector<double> params;

    static AnswerLaw point(std::vector<double> p) { return {Kind::Point, std::move(p)}; }
    static AnswerLaw dirichlet(std::vector<double> alpha) { return {Kind::Dirichlet, std::move(alpha)}; }

    /// "point:p1,...,pK" or "dirichlet:a1,...,aK".
    static AnswerLaw parse(std::string_view text);
    void validate(int k) const;
    std::vector<double> draw(Rng& rng) const;
};

/// Conditional law of C_t given P.
struct ConfidenceNoise {
    enum class Kind {
        Independent,        // C_t ~ law, regardless of P
        TruthMassGaussian,  // C_t = P_1 + N(0, sigma^2)
    };
    Kind kind = Kind::Independent;
    ConfidenceLaw law = ConfidenceLaw::point(0.5);
    double sigma = 0.0;

    static ConfidenceNoise independent(ConfidenceLaw law) { return {Kind::Independent, law, 0.0}; }
    static ConfidenceNoise truth_mass_gaussian(double sigma) {
        return {Kind::TruthMassGaussian, ConfidenceLaw::point(0.5), sigma};
    }

    /// "gauss:sigma", or any ConfidenceLaw spec for the independent case.
    static ConfidenceNoise parse(std::string_view text);
    void validate() const;
    double draw(std::span<const double> p, Rng& rng) const;
};

struct IdealGenConfig {
    int k = 2;
    ConfidenceLaw confidence_law = ConfidenceLaw::uniform(0.55, 0.95);
    int m_max = 1000;
    std::uint64_t seed = 0;
    /// Permit point-mass(1/K) confidences, used only as a negative control.
    bool allow_uninformative = false;

    void validate() const;
};

struct RealisticGenConfig {
    int k = 2;
    AnswerLaw answer_law = AnswerLaw::point({0.5, 0.5});
    ConfidenceNoise confidence_noise;
    int m_max = 1000;
    std::uint64_t seed = 0;

    void validate() const;
};

using GenConfig = std::variant<IdealGenConfig, RealisticGenConfig>;

int candidate_count(const GenConfig& config);
std::uint64_t config_seed(const GenConfig& config);

/// Candidate labels "a1".."aK" used by every trace.
std::vector<std::string> candidate_labels(int k);

struct TrialTrace {
    int true_index = 1;                       // 1-based
    std::vector<double> answer_probs;         // P in the labeling where truth is index 1
    std::vector<Sample> samples;
    /// Competitor index k -> cumulative sum of LLR increments (truth vs k) per round.
    std::map<int, std::vector<double>> llr_paths;
    /// Posterior after each round, fixed-K over all K labels.
    std::vector<PosteriorVector> posterior_path;
};

/// Ideal regime: I ~ Uniform[K], C_t ~ law, R_t = a_I with probability C_t and a
/// uniformly chosen wrong candidate otherwise.
TrialTrace sample_ideal(const IdealGenConfig& config, int m, Rng& rng);

/// Realistic regime: truth is index 1, P ~ answer law, R_t ~ P, C_t ~ noise(P).
TrialTrace sample_realistic(const RealisticGenConfig& config, int m, Rng& rng);

enum class DriftMethod { ClosedForm, MonteCarlo };

struct DriftEstimate {
    std::map<int, double> mu;        // competitor index k (2..K) -> drift
    std::map<int, double> std_err;   // zero for ClosedForm
    DriftMethod method = DriftMethod::ClosedForm;
};

/// Expected per-sample LLR increment of the truth against each competitor.
/// ClosedForm needs point-mass laws; MonteCarlo averages n_mc simulated increments.
DriftEstimate drift(const GenConfig& config, DriftMethod method, int n_mc, Rng& rng);

/// ClosedForm when the config allows it, MonteCarlo otherwise.
DriftEstimate drift_auto(const GenConfig& config, int n_mc, Rng& rng);

struct ConcentrationRow {
    int m = 0;
    int trials = 0;
    double success_freq = 0.0;     // P(argmax = truth)
    double mean_mass_truth = 0.0;  // mean posterior mass on the truth
};

/// For every m in the schedule, `trials` independent traces (trial i seeded by
/// derive_seed(seed, i)); each row reads the same traces at prefix length m.
std::vector<ConcentrationRow> concentration_experiment(const GenConfig& config,
                                                       std::span<const int> m_schedule,
                                                       int trials, int max_parallel = 1);

/// Columns: m,trials,success_freq,mean_mass_truth,drift_2..drift_K,seed
void write_concentration_csv(std::ostream& out, std::span<const ConcentrationRow> rows,
                             const DriftEstimate& drift, std::uint64_t seed);

} // namespace cges::gen
