#include "cges/harness.hpp"

#include "cges/csv.hpp"
#include "cges/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>

namespace cges {

std::vector<double> default_gamma_grid() {
    return {0.70, 0.75, 0.80, 0.85, 0.90, 0.95, 0.99, 0.999, 0.9999};
}

void ExperimentSpec::validate() const {
    if (questions.empty()) {
        throw Error(ErrorCode::EmptyInput, "experiment has no questions");
    }
    for (const auto& q : questions) {
        if (q.gold.empty()) {
            throw Error(ErrorCode::Configuration, "question '" + q.id + "' has no gold answer");
        }
    }
    if (seeds.empty()) {
        throw Error(ErrorCode::Configuration, "at least one seed is required");
    }
    for (double g : gamma_grid) {
        if (!(g > 0.0 && g <= 1.0)) {
            throw Error(ErrorCode::Configuration, "gamma grid values must lie in (0, 1]");
        }
    }
    for (const auto& m : methods) {
        m.validate();
    }
    if (!source) {
        throw Error(ErrorCode::Configuration, "experiment has no sample source");
    }
}

std::string normalize_answer(std::string_view label, AnswerFormat format) {
    auto out = collapse_whitespace(label);
    if (format == AnswerFormat::LetterChoice) {
        for (auto& c : out) {
            c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        }
    }
    return out;
}

double accuracy(const std::map<std::string, std::string>& predictions,
                const std::map<std::string, GoldAnswer>& gold) {
    std::vector<std::string> missing;
    for (const auto& [id, _] : gold) {
        if (!predictions.contains(id)) {
            missing.push_back("prediction:" + id);
        }
    }
    for (const auto& [id, _] : predictions) {
        if (!gold.contains(id)) {
            missing.push_back("gold:" + id);
        }
    }
    if (!missing.empty()) {
        std::string list;
        for (const auto& m : missing) {
            list += (list.empty() ? "" : ", ") + m;
        }
        throw Error(ErrorCode::KeyMismatch, "missing ids: " + list);
    }
    if (gold.empty()) {
        throw Error(ErrorCode::EmptyInput, "accuracy over no questions");
    }
    std::size_t correct = 0;
    for (const auto& [id, g] : gold) {
        if (normalize_answer(predictions.at(id), g.format) == normalize_answer(g.answer, g.format)) {
            ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(gold.size());
}

std::map<std::string, std::string> predictions_of(const RunResult& result) {
    std::map<std::string, std::string> out;
    for (const auto& o : result.outcomes) {
        out[o.question_id] = o.prediction;
    }
    return out;
}

std::map<std::string, GoldAnswer> gold_of(std::span<const Question> questions) {
    std::map<std::string, GoldAnswer> out;
    for (const auto& q : questions) {
        out[q.id] = {q.gold, q.format};
    }
    return out;
}

namespace {

MethodRow run_over_seeds(const ExperimentSpec& spec, const ControllerConfig& config) {
    MethodRow row;
    row.method = config.method;
    if (config.method == Method::CGES) {
        row.gamma = config.gamma;
    }
    auto gold = gold_of(spec.questions);
    for (auto seed : spec.seeds) {
        auto sampler = spec.source(seed);
        RunResult result;
        try {
            result = run_method(spec.questions, sampler, config);
        } catch (const Error& ex) {
            throw Error(ex.code(), std::string(to_string(config.method)) + " seed " + std::to_string(seed) +
                                       ": " + ex.what());
        }
        row.per_seed_calls.push_back(result.avg_calls);
        row.per_seed_accuracy.push_back(accuracy(predictions_of(result), gold));
    }
    double n = static_cast<double>(spec.seeds.size());
    for (std::size_t i = 0; i < spec.seeds.size(); ++i) {
        row.avg_calls += row.per_seed_calls[i];
        row.accuracy += row.per_seed_accuracy[i];
    }
    row.avg_calls /= n;
    row.accuracy /= n;
    return row;
}

const ControllerConfig* first_cges(const ExperimentSpec& spec) {
    for (const auto& m : spec.methods) {
        if (m.method == Method::CGES) {
            return &m;
        }
    }
    return nullptr;
}

std::string optional_field(const std::optional<double>& value) {
    return value ? csv::format_double(*value) : std::string();
}

} // namespace

ComparisonReport compare_methods(const ExperimentSpec& spec) {
    spec.validate();
    ComparisonReport report;
    for (const auto& m : spec.methods) {
        report.rows.push_back(run_over_seeds(spec, m));
    }
    auto sc = std::find_if(report.rows.begin(), report.rows.end(),
                           [](const MethodRow& r) { return r.method == Method::SC; });
    if (sc != report.rows.end()) {
        double sc_calls = sc->avg_calls;
        double sc_acc = sc->accuracy;
        for (auto& r : report.rows) {
            r.delta_calls = r.avg_calls - sc_calls;
            r.delta_acc = r.accuracy - sc_acc;
        }
    }
    if (!spec.gamma_grid.empty() && first_cges(spec)) {
        report.curve = sweep_gamma(spec);
    }
    return report;
}

std::vector<CurvePoint> sweep_gamma(const ExperimentSpec& spec) {
    spec.validate();
    const auto* base = first_cges(spec);
    if (!base) {
        throw Error(ErrorCode::Configuration, "gamma sweep needs a CGES method");
    }
    std::vector<CurvePoint> curve;
    for (double g : spec.gamma_grid) {
        ControllerConfig config = *base;
        config.gamma = g;
        auto row = run_over_seeds(spec, config);
        curve.push_back({g, row.avg_calls, row.accuracy});
    }
    return curve;
}

OperatingPoints select_operating_points(std::span<const CurvePoint> curve, double sc_accuracy) {
    if (curve.empty()) {
        throw Error(ErrorCode::EmptyInput, "no curve points to select from");
    }
    auto largest = *std::max_element(curve.begin(), curve.end(),
                                     [](const auto& a, const auto& b) { return a.gamma < b.gamma; });
    OperatingPoints out{largest, largest, false};
    for (const auto& p : curve) {
        if (p.accuracy >= sc_accuracy && (!out.matches_sc || p.gamma < out.efficient.gamma)) {
            out.efficient = p;
            out.matches_sc = true;
        }
    }
    return out;
}

std::vector<Question> load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::Io, "cannot open dataset " + path.string());
    }
    std::vector<Question> questions;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            auto j = nlohmann::json::parse(line);
            Question q;
            q.id = j.at("id").get<std::string>();
            q.prompt = j.value("prompt", std::string());
            q.gold = j.value("gold", std::string());
            q.format = parse_answer_format(j.value("format", std::string("boxed")));
            questions.push_back(std::move(q));
        } catch (const nlohmann::json::exception& ex) {
            throw Error(ErrorCode::Parse, path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
        }
    }
    for (std::size_t i = 0; i < questions.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            if (questions[i].id == questions[j].id) {
                throw Error(ErrorCode::Configuration, "duplicate question id '" + questions[i].id + "'");
            }
        }
    }
    return questions;
}

void write_comparison_csv(std::ostream& out, const ComparisonReport& report) {
    csv::write_row(out, {"method", "gamma", "avg_calls", "accuracy", "delta_calls", "delta_acc"});
    for (const auto& r : report.rows) {
        csv::write_row(out, {std::string(to_string(r.method)), optional_field(r.gamma),
                             csv::format_double(r.avg_calls), csv::format_double(r.accuracy),
                             optional_field(r.delta_calls), optional_field(r.delta_acc)});
    }
}

void write_curve_csv(std::ostream& out, std::span<const CurvePoint> curve) {
    csv::write_row(out, {"gamma", "avg_calls", "accuracy"});
    for (const auto& p : curve) {
        csv::write_row(out, {csv::format_double(p.gamma), csv::format_double(p.avg_calls),
                             csv::format_double(p.accuracy)});
    }
}

void write_predictions_csv(std::ostream& out, const RunResult& result) {
    csv::write_row(out, {"question_id", "prediction", "calls", "prediction_mass", "resolved"});
    for (const auto& o : result.outcomes) {
        double mass = o.posterior.mass(o.prediction).value_or(0.0);
        csv::write_row(out, {o.question_id, o.prediction, std::to_string(o.calls), csv::format_double(mass),
                             o.resolved ? "1" : "0"});
    }
}

void write_summary(std::ostream& out, const ComparisonReport& report) {
    auto flags = out.flags();
    out << std::left << std::setw(8) << "method" << std::setw(10) << "gamma" << std::setw(12) << "avg_calls"
        << std::setw(12) << "accuracy" << std::setw(14) << "delta_calls" << "delta_acc\n";
    out << std::fixed;
    for (const auto& r : report.rows) {
        out << std::setw(8) << to_string(r.method) << std::setw(10)
            << (r.gamma ? csv::format_double(*r.gamma) : "-") << std::setw(12) << std::setprecision(2)
            << r.avg_calls << std::setw(12) << std::setprecision(2) << 100.0 * r.accuracy;
        if (r.delta_calls) {
            out << std::showpos << std::setw(14) << std::setprecision(2) << *r.delta_calls << std::setprecision(2)
                << 100.0 * *r.delta_acc << std::noshowpos;
        } else {
            out << std::setw(14) << "-" << "-";
        }
        out << '\n';
    }
    if (!report.curve.empty()) {
        out << "curve (gamma: avg_calls, accuracy%)\n";
        for (const auto& p : report.curve) {
            out << "  " << csv::format_double(p.gamma) << ": " << std::setprecision(2) << p.avg_calls << ", "
                << 100.0 * p.accuracy << '\n';
        }
    }
    out.flags(flags);
}

} // namespace cges
