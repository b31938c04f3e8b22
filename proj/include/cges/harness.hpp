#pragma once

// Experiment orchestration: method comparisons averaged over seeds, gamma sweeps
// for accuracy-vs-calls curves, and the CSV/text outputs of the CLI.

#include "cges/confidence.hpp"
#include "cges/controller.hpp"
#include "cges/question.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace cges {

/// 0.70, 0.75, 0.80, 0.85, 0.90, 0.95, 0.99, 0.999, 0.9999
std::vector<double> default_gamma_grid();

/// Builds the sampler for one seed (live endpoint or replay store).
using SamplerSource = std::function<Sampler(std::uint64_t seed)>;

struct ExperimentSpec {
    std::vector<Question> questions;   // gold answers required
    std::vector<ControllerConfig> methods;
    std::vector<double> gamma_grid;    // empty: no curve in compare_methods
    std::vector<std::uint64_t> seeds = {0, 1, 2};
    ConfidenceConfig estimator;
    SamplerSource source;

    void validate() const;
};

struct MethodRow {
    Method method = Method::SC;
    std::optional<double> gamma;       // CGES only
    double avg_calls = 0.0;
    double accuracy = 0.0;             // fraction in [0,1]
    std::optional<double> delta_calls; // vs the SC row; absent without one
    std::optional<double> delta_acc;
    std::vector<double> per_seed_calls;
    std::vector<double> per_seed_accuracy;
};

struct CurvePoint {
    double gamma = 0.0;
    double avg_calls = 0.0;
    double accuracy = 0.0;
};

struct ComparisonReport {
    std::vector<MethodRow> rows;
    std::vector<CurvePoint> curve;
};

struct GoldAnswer {
    std::string answer;
    AnswerFormat format = AnswerFormat::BoxedMath;
};

/// Trim, collapse whitespace, upper-case option letters. Math answers are
/// compared as strings; no symbolic equivalence.
std::string normalize_answer(std::string_view label, AnswerFormat format);

/// Fraction of questions whose normalized prediction equals the gold answer.
/// Throws KeyMismatch listing ids present on only one side.
double accuracy(const std::map<std::string, std::string>& predictions,
                const std::map<std::string, GoldAnswer>& gold);

std::map<std::string, std::string> predictions_of(const RunResult& result);
std::map<std::string, GoldAnswer> gold_of(std::span<const Question> questions);

/// One row per configured method, seed-averaged, with deltas against SC. The
/// curve is filled when the grid is non-empty and a CGES method is configured.
ComparisonReport compare_methods(const ExperimentSpec& spec);

/// One point per grid gamma (grid order) using the first CGES method.
std::vector<CurvePoint> sweep_gamma(const ExperimentSpec& spec);

struct OperatingPoints {
    CurvePoint efficient;      // smallest gamma matching or beating SC accuracy
    CurvePoint conservative;   // largest gamma in the grid
    bool matches_sc = false;   // false: both points are the largest gamma
};

OperatingPoints select_operating_points(std::span<const CurvePoint> curve, double sc_accuracy);

/// JSONL with fields id, prompt, gold, format.
std::vector<Question> load_dataset(const std::filesystem::path& path);

/// Columns: method,gamma,avg_calls,accuracy,delta_calls,delta_acc
void write_comparison_csv(std::ostream& out, const ComparisonReport& report);
/// Columns: gamma,avg_calls,accuracy
void write_curve_csv(std::ostream& out, std::span<const CurvePoint> curve);
/// Columns: question_id,prediction,calls,prediction_mass,resolved
void write_predictions_csv(std::ostream& out, const RunResult& result);

void write_summary(std::ostream& out, const ComparisonReport& report);

} // namespace cges
