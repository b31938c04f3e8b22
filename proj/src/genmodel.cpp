#include "cges/genmodel.hpp"

#include "cges/confidence.hpp"
#include "cges/csv.hpp"
#include "cges/error.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <set>

namespace cges::gen {

namespace {

std::vector<double> parse_numbers(std::string_view text) {
    std::vector<double> out;
    while (!text.empty()) {
        auto comma = text.find(',');
        auto item = text.substr(0, comma);
        while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
        while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
        double value = 0.0;
        auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), value);
        if (ec != std::errc() || end != item.data() + item.size() || item.empty()) {
            throw Error(ErrorCode::Configuration, "not a number: '" + std::string(item) + "'");
        }
        out.push_back(value);
        if (comma == std::string_view::npos) {
            break;
        }
        text.remove_prefix(comma + 1);
    }
    return out;
}

std::pair<std::string_view, std::vector<double>> split_spec(std::string_view text) {
    auto colon = text.find(':');
    if (colon == std::string_view::npos) {
        throw Error(ErrorCode::Configuration, "distribution spec needs 'kind:params', got '" +
                                                   std::string(text) + "'");
    }
    return {text.substr(0, colon), parse_numbers(text.substr(colon + 1))};
}

double uniform01(Rng& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

double draw_gamma(double shape, Rng& rng) {
    return std::gamma_distribution<double>(shape, 1.0)(rng);
}

int draw_categorical(std::span<const double> p, Rng& rng) {
    double u = uniform01(rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) {
            return static_cast<int>(i) + 1;
        }
    }
    // u landed in the rounding gap above the cumulative sum; take the last
    // candidate with positive probability.
    for (std::size_t i = p.size(); i-- > 0;) {
        if (p[i] > 0.0) {
            return static_cast<int>(i) + 1;
        }
    }
    return static_cast<int>(p.size());
}

/// One simulated call in the trace labeling.
struct Draw {
    int answer = 1;
    double confidence = 0.5;
};

struct Trial {
    int truth = 1;
    std::vector<double> answer_probs;
    std::vector<Draw> draws;
};

Draw draw_ideal(int k, int truth, const ConfidenceLaw& law, Rng& rng) {
    Draw d;
    d.confidence = clamp_confidence(law.draw(rng));
    if (uniform01(rng) < d.confidence) {
        d.answer = truth;
    } else {
        int wrong = std::uniform_int_distribution<int>(1, k - 1)(rng);
        d.answer = wrong >= truth ? wrong + 1 : wrong;
    }
    return d;
}

Trial simulate_ideal(const IdealGenConfig& config, int m, Rng& rng) {
    Trial trial;
    trial.truth = std::uniform_int_distribution<int>(1, config.k)(rng);
    trial.draws.reserve(static_cast<std::size_t>(m));
    for (int t = 0; t < m; ++t) {
        trial.draws.push_back(draw_ideal(config.k, trial.truth, config.confidence_law, rng));
    }
    return trial;
}

Trial simulate_realistic(const RealisticGenConfig& config, int m, Rng& rng) {
    Trial trial;
    trial.truth = 1;
    trial.answer_probs = config.answer_law.draw(rng);
    trial.draws.reserve(static_cast<std::size_t>(m));
    for (int t = 0; t < m; ++t) {
        Draw d;
        d.confidence = clamp_confidence(config.confidence_noise.draw(trial.answer_probs, rng));
        d.answer = draw_categorical(trial.answer_probs, rng);
        trial.draws.push_back(d);
    }
    return trial;
}

Trial simulate(const GenConfig& config, int m, Rng& rng) {
    return std::visit(
        [&](const auto& c) -> Trial {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, IdealGenConfig>) {
                return simulate_ideal(c, m, rng);
            } else {
                return simulate_realistic(c, m, rng);
            }
        },
        config);
}

void check_m(int m, int m_max) {
    if (m < 1 || m > m_max) {
        throw Error(ErrorCode::Configuration,
                    "trace length must lie in [1, " + std::to_string(m_max) + "], got " + std::to_string(m));
    }
}

int config_m_max(const GenConfig& config) {
    return std::visit([](const auto& c) { return c.m_max; }, config);
}

void validate(const GenConfig& config) {
    std::visit([](const auto& c) { c.validate(); }, config);
}

TrialTrace build_trace(const Trial& trial, int k) {
    auto labels = candidate_labels(k);
    TrialTrace trace;
    trace.true_index = trial.truth;
    trace.answer_probs = trial.answer_probs;
    for (int j = 1; j <= k; ++j) {
        if (j != trial.truth) {
            trace.llr_paths[j].reserve(trial.draws.size());
        }
    }

    ScoreAccumulator acc(CandidateSet(KPolicy::fixed(k), labels));
    int round = 0;
    for (const auto& d : trial.draws) {
        Sample s{labels[static_cast<std::size_t>(d.answer - 1)], d.confidence, ++round};
        for (auto& [j, path] : trace.llr_paths) {
            double prev = path.empty() ? 0.0 : path.back();
            path.push_back(prev + llr_increment(s, d.answer == trial.truth, d.answer == j, k));
        }
        acc.add(s);
        trace.posterior_path.push_back(acc.posterior());
        trace.samples.push_back(std::move(s));
    }
    return trace;
}

bool closed_form_available(const GenConfig& config) {
    if (const auto* ideal = std::get_if<IdealGenConfig>(&config)) {
        return ideal->confidence_law.kind == ConfidenceLaw::Kind::Point;
    }
    const auto& real = std::get<RealisticGenConfig>(config);
    return real.answer_law.kind == AnswerLaw::Kind::Point &&
           real.confidence_noise.kind == ConfidenceNoise::Kind::Independent &&
           real.confidence_noise.law.kind == ConfidenceLaw::Kind::Point;
}

DriftEstimate closed_form_drift(const GenConfig& config) {
    if (!closed_form_available(config)) {
        throw Error(ErrorCode::UnsupportedClosedForm,
                    "closed-form drift needs point-mass confidence and answer laws");
    }
    DriftEstimate est;
    est.method = DriftMethod::ClosedForm;
    int k = candidate_count(config);
    std::vector<double> p;
    double c = 0.0;
    if (const auto* ideal = std::get_if<IdealGenConfig>(&config)) {
        c = clamp_confidence(ideal->confidence_law.a);
        p.assign(static_cast<std::size_t>(k), (1.0 - c) / (k - 1));
        p[0] = c;
    } else {
        const auto& real = std::get<RealisticGenConfig>(config);
        c = clamp_confidence(real.confidence_noise.law.a);
        p = real.answer_law.params;
    }
    double log_ratio = std::log(c * (k - 1) / (1.0 - c));
    for (int j = 2; j <= k; ++j) {
        est.mu[j] = (p[0] - p[static_cast<std::size_t>(j - 1)]) * log_ratio;
        est.std_err[j] = 0.0;
    }
    return est;
}

DriftEstimate monte_carlo_drift(const GenConfig& config, int n_mc, Rng& rng) {
    if (n_mc < 2) {
        throw Error(ErrorCode::Configuration, "Monte Carlo drift needs at least 2 draws");
    }
    int k = candidate_count(config);
    auto labels = candidate_labels(k);
    std::vector<double> sum(static_cast<std::size_t>(k + 1), 0.0);
    std::vector<double> sum_sq(static_cast<std::size_t>(k + 1), 0.0);
    for (int n = 0; n < n_mc; ++n) {
        // Every draw is relabeled so that index 1 is the truth.
        Draw d;
        if (const auto* ideal = std::get_if<IdealGenConfig>(&config)) {
            d = draw_ideal(k, 1, ideal->confidence_law, rng);
        } else {
            const auto& real = std::get<RealisticGenConfig>(config);
            auto p = real.answer_law.draw(rng);
            d.confidence = clamp_confidence(real.confidence_noise.draw(p, rng));
            d.answer = draw_categorical(p, rng);
        }
        Sample s{labels[static_cast<std::size_t>(d.answer - 1)], d.confidence, 1};
        for (int j = 2; j <= k; ++j) {
            double y = llr_increment(s, d.answer == 1, d.answer == j, k);
            sum[static_cast<std::size_t>(j)] += y;
            sum_sq[static_cast<std::size_t>(j)] += y * y;
        }
    }
    DriftEstimate est;
    est.method = DriftMethod::MonteCarlo;
    double n = n_mc;
    for (int j = 2; j <= k; ++j) {
        double mean = sum[static_cast<std::size_t>(j)] / n;
        double var = std::max(0.0, (sum_sq[static_cast<std::size_t>(j)] - n * mean * mean) / (n - 1.0));
        est.mu[j] = mean;
        est.std_err[j] = std::sqrt(var / n);
    }
    return est;
}

} // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

ConfidenceLaw ConfidenceLaw::parse(std::string_view text) {
    auto [kind, params] = split_spec(text);
    ConfidenceLaw law;
    if (kind == "point" && params.size() == 1) {
        law = point(params[0]);
    } else if (kind == "uniform" && params.size() == 2) {
        law = uniform(params[0], params[1]);
    } else if (kind == "beta" && params.size() == 2) {
        law = beta(params[0], params[1]);
    } else {
        throw Error(ErrorCode::Configuration, "unknown confidence law '" + std::string(text) + "'");
    }
    law.validate();
    return law;
}

std::string ConfidenceLaw::to_string() const {
    switch (kind) {
        case Kind::Point: return "point:" + csv::format_double(a);
        case Kind::Uniform: return "uniform:" + csv::format_double(a) + "," + csv::format_double(b);
        case Kind::Beta: return "beta:" + csv::format_double(a) + "," + csv::format_double(b);
    }
    return "unknown";
}

void ConfidenceLaw::validate() const {
    bool ok = false;
    switch (kind) {
        case Kind::Point: ok = a > 0.0 && a < 1.0; break;
        case Kind::Uniform: ok = a > 0.0 && b < 1.0 && a < b; break;
        case Kind::Beta: ok = a > 0.0 && b > 0.0 && std::isfinite(a) && std::isfinite(b); break;
    }
    if (!ok) {
        throw Error(ErrorCode::Configuration, "confidence law " + to_string() + " has support outside (0,1)");
    }
}

double ConfidenceLaw::draw(Rng& rng) const {
    switch (kind) {
        case Kind::Point: return a;
        case Kind::Uniform: return std::uniform_real_distribution<double>(a, b)(rng);
        case Kind::Beta: {
            double x = draw_gamma(a, rng);
            double y = draw_gamma(b, rng);
            return x / (x + y);
        }
    }
    return a;
}

AnswerLaw AnswerLaw::parse(std::string_view text) {
    auto [kind, params] = split_spec(text);
    if (kind == "point") {
        return point(std::move(params));
    }
    if (kind == "dirichlet") {
        return dirichlet(std::move(params));
    }
    throw Error(ErrorCode::Configuration, "unknown answer law '" + std::string(text) + "'");
}

void AnswerLaw::validate(int k) const {
    if (static_cast<int>(params.size()) != k) {
        throw Error(ErrorCode::Configuration, "answer law needs exactly K=" + std::to_string(k) + " parameters");
    }
    if (kind == Kind::Point) {
        double total = 0.0;
        for (double p : params) {
            if (!(p >= 0.0 && p <= 1.0)) {
                throw Error(ErrorCode::Configuration, "answer probabilities must lie in [0,1]");
            }
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-12) {
            throw Error(ErrorCode::Configuration, "answer probabilities must sum to 1 within 1e-12");
        }
    } else {
        for (double alpha : params) {
            if (!(alpha > 0.0) || !std::isfinite(alpha)) {
                throw Error(ErrorCode::Configuration, "Dirichlet concentrations must be positive");
            }
        }
    }
}

std::vector<double> AnswerLaw::draw(Rng& rng) const {
    if (kind == Kind::Point) {
        return params;
    }
    std::vector<double> out;
    out.reserve(params.size());
    for (double alpha : params) {
        out.push_back(draw_gamma(alpha, rng));
    }
    double total = std::accumulate(out.begin(), out.end(), 0.0);
    for (auto& x : out) {
        x /= total;
    }
    return out;
}

ConfidenceNoise ConfidenceNoise::parse(std::string_view text) {
    if (text.starts_with("gauss:")) {
        auto params = parse_numbers(text.substr(6));
        if (params.size() != 1) {
            throw Error(ErrorCode::Configuration, "gauss noise takes one sigma");
        }
        auto noise = truth_mass_gaussian(params[0]);
        noise.validate();
        return noise;
    }
    return independent(ConfidenceLaw::parse(text));
}

void ConfidenceNoise::validate() const {
    if (kind == Kind::Independent) {
        law.validate();
    } else if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
        throw Error(ErrorCode::Configuration, "noise sigma must be finite and non-negative");
    }
}

double ConfidenceNoise::draw(std::span<const double> p, Rng& rng) const {
    if (kind == Kind::Independent) {
        return law.draw(rng);
    }
    double noise = sigma > 0.0 ? std::normal_distribution<double>(0.0, sigma)(rng) : 0.0;
    return p.front() + noise;
}

void IdealGenConfig::validate() const {
    if (k < 2) {
        throw Error(ErrorCode::Configuration, "K must be at least 2");
    }
    if (m_max < 1) {
        throw Error(ErrorCode::Configuration, "m_max must be at least 1");
    }
    confidence_law.validate();
    bool uninformative = confidence_law.kind == ConfidenceLaw::Kind::Point &&
                         std::abs(confidence_law.a - 1.0 / k) < 1e-15;
    if (uninformative && !allow_uninformative) {
        throw Error(ErrorCode::Configuration,
                    "point-mass(1/K) confidences are uninformative; enable the negative-control flag to run them");
    }
}

void RealisticGenConfig::validate() const {
    if (k < 2) {
        throw Error(ErrorCode::Configuration, "K must be at least 2");
    }
    if (m_max < 1) {
        throw Error(ErrorCode::Configuration, "m_max must be at least 1");
    }
    answer_law.validate(k);
    confidence_noise.validate();
}

int candidate_count(const GenConfig& config) {
    return std::visit([](const auto& c) { return c.k; }, config);
}

std::uint64_t config_seed(const GenConfig& config) {
    return std::visit([](const auto& c) { return c.seed; }, config);
}

std::vector<std::string> candidate_labels(int k) {
    std::vector<std::string> labels;
    for (int i = 1; i <= k; ++i) {
        labels.push_back("a" + std::to_string(i));
    }
    return labels;
}

TrialTrace sample_ideal(const IdealGenConfig& config, int m, Rng& rng) {
    config.validate();
    check_m(m, config.m_max);
    return build_trace(simulate_ideal(config, m, rng), config.k);
}

TrialTrace sample_realistic(const RealisticGenConfig& config, int m, Rng& rng) {
    config.validate();
    check_m(m, config.m_max);
    return build_trace(simulate_realistic(config, m, rng), config.k);
}

DriftEstimate drift(const GenConfig& config, DriftMethod method, int n_mc, Rng& rng) {
    validate(config);
    if (method == DriftMethod::ClosedForm) {
        return closed_form_drift(config);
    }
    return monte_carlo_drift(config, n_mc, rng);
}

DriftEstimate drift_auto(const GenConfig& config, int n_mc, Rng& rng) {
    return drift(config, closed_form_available(config) ? DriftMethod::ClosedForm : DriftMethod::MonteCarlo,
                 n_mc, rng);
}

std::vector<ConcentrationRow> concentration_experiment(const GenConfig& config,
                                                       std::span<const int> m_schedule,
                                                       int trials, int max_parallel) {
    validate(config);
    if (trials < 1) {
        throw Error(ErrorCode::Configuration, "trials must be at least 1");
    }
    if (m_schedule.empty()) {
        return {};
    }
    int m_max = config_m_max(config);
    for (int m : m_schedule) {
        check_m(m, m_max);
    }
    int longest = *std::max_element(m_schedule.begin(), m_schedule.end());
    std::set<int> checkpoints(m_schedule.begin(), m_schedule.end());

    int k = candidate_count(config);
    auto labels = candidate_labels(k);
    std::uint64_t seed = config_seed(config);

    struct TrialResult {
        std::map<int, bool> success;
        std::map<int, double> mass_truth;
    };
    std::vector<TrialResult> results(static_cast<std::size_t>(trials));

    detail::parallel_for(results.size(), max_parallel, [&](std::size_t i) {
        Rng rng(derive_seed(seed, i));
        Trial trial = simulate(config, longest, rng);
        const std::string& truth_label = labels[static_cast<std::size_t>(trial.truth - 1)];
        ScoreAccumulator acc(CandidateSet(KPolicy::fixed(k), labels));
        int t = 0;
        for (const auto& d : trial.draws) {
            acc.add({labels[static_cast<std::size_t>(d.answer - 1)], d.confidence, ++t});
            if (checkpoints.contains(t)) {
                auto posterior = acc.posterior();
                results[i].success[t] = top(posterior).label == truth_label;
                results[i].mass_truth[t] = *posterior.mass(truth_label);
            }
        }
    });

    std::vector<ConcentrationRow> rows;
    for (int m : m_schedule) {
        ConcentrationRow row;
        row.m = m;
        row.trials = trials;
        double hits = 0.0;
        double mass = 0.0;
        for (const auto& r : results) {
            hits += r.success.at(m) ? 1.0 : 0.0;
            mass += r.mass_truth.at(m);
        }
        row.success_freq = hits / trials;
        row.mean_mass_truth = mass / trials;
        rows.push_back(row);
    }
    return rows;
}

void write_concentration_csv(std::ostream& out, std::span<const ConcentrationRow> rows,
                             const DriftEstimate& drift, std::uint64_t seed) {
    std::vector<std::string> header = {"m", "trials", "success_freq", "mean_mass_truth"};
    for (const auto& [j, mu] : drift.mu) {
        header.push_back("drift_" + std::to_string(j));
    }
    header.push_back("seed");
    csv::write_row(out, header);
    for (const auto& row : rows) {
        std::vector<std::string> fields = {std::to_string(row.m), std::to_string(row.trials),
                                           csv::format_double(row.success_freq),
                                           csv::format_double(row.mean_mass_truth)};
        for (const auto& [j, mu] : drift.mu) {
            fields.push_back(csv::format_double(mu));
        }
        fields.push_back(std::to_string(seed));
        csv::write_row(out, fields);
    }
}

} // namespace cges::gen
