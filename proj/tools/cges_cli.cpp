// cges: command-line front end.
//
//   cges simulate  concentration experiments on the generative model
//   cges score     posterior over candidates for a JSONL file of samples
//   cges run       compare SC / ESC / CGES on a dataset
//   cges sweep     accuracy-vs-calls curve over a gamma grid
//   cges replay    re-execute one method from a record store

#include "cges/confidence.hpp"
#include "cges/controller.hpp"
#include "cges/csv.hpp"
#include "cges/error.hpp"
#include "cges/genmodel.hpp"
#include "cges/harness.hpp"
#include "cges/llmclient.hpp"
#include "cges/posterior.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

namespace {

using namespace cges;

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        auto trimmed = collapse_whitespace(item);
        if (!trimmed.empty()) {
            out.push_back(trimmed);
        }
    }
    return out;
}

std::vector<double> parse_doubles(const std::string& text) {
    std::vector<double> out;
    for (const auto& s : split_list(text)) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(s, &used));
            if (used != s.size()) {
                throw std::invalid_argument(s);
            }
        } catch (const std::exception&) {
            throw Error(ErrorCode::Configuration, "not a number: '" + s + "'");
        }
    }
    return out;
}

template <typename Int>
std::vector<Int> parse_ints(const std::string& text) {
    std::vector<Int> out;
    for (const auto& s : split_list(text)) {
        try {
            std::size_t used = 0;
            auto v = std::stoll(s, &used);
            if (used != s.size()) {
                throw std::invalid_argument(s);
            }
            out.push_back(static_cast<Int>(v));
        } catch (const std::exception&) {
            throw Error(ErrorCode::Configuration, "not an integer: '" + s + "'");
        }
    }
    return out;
}

/// Writes to `path`, or stdout for "-" / empty.
class Output {
public:
    explicit Output(const std::string& path) {
        if (!path.empty() && path != "-") {
            file_.open(path, std::ios::binary | std::ios::trunc);
            if (!file_) {
                throw Error(ErrorCode::Io, "cannot write " + path);
            }
        }
    }
    std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

private:
    std::ofstream file_;
};

std::string with_seed(const std::string& pattern, std::uint64_t seed) {
    auto out = pattern;
    auto pos = out.find("{seed}");
    if (pos != std::string::npos) {
        out.replace(pos, 6, std::to_string(seed));
    }
    return out;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
    std::string regime = "ideal";
    int k = 5;
    std::string confidence_law = "uniform:0.55,0.95";
    std::string answer_law;
    std::string noise = "point:0.3";
    std::string m_schedule = "1,2,5,10,20,50,100";
    int trials = 2000;
    std::uint64_t seed = 0;
    int n_mc = 200000;
    int parallel = 1;
    bool allow_uninformative = false;
    std::string out;
};

int run_simulate(const SimulateArgs& a) {
    auto schedule = parse_ints<int>(a.m_schedule);
    int longest = schedule.empty() ? 1 : *std::max_element(schedule.begin(), schedule.end());
    gen::GenConfig config;
    if (a.regime == "ideal") {
        gen::IdealGenConfig c;
        c.k = a.k;
        c.confidence_law = gen::ConfidenceLaw::parse(a.confidence_law);
        c.m_max = std::max(longest, 1);
        c.seed = a.seed;
        c.allow_uninformative = a.allow_uninformative;
        config = c;
    } else if (a.regime == "realistic") {
        gen::RealisticGenConfig c;
        c.k = a.k;
        if (a.answer_law.empty()) {
            throw Error(ErrorCode::Configuration, "realistic regime needs --answer-law");
        }
        c.answer_law = gen::AnswerLaw::parse(a.answer_law);
        c.confidence_noise = gen::ConfidenceNoise::parse(a.noise);
        c.m_max = std::max(longest, 1);
        c.seed = a.seed;
        config = c;
    } else {
        throw Error(ErrorCode::Configuration, "--regime must be ideal or realistic");
    }

    auto rows = gen::concentration_experiment(config, schedule, a.trials, a.parallel);
    gen::Rng drift_rng(gen::derive_seed(a.seed, 0xD1F7ULL));
    auto drift = gen::drift_auto(config, a.n_mc, drift_rng);
    Output out(a.out);
    gen::write_concentration_csv(out.stream(), rows, drift, a.seed);
    return 0;
}

// ---------------------------------------------------------------- score

struct ScoreArgs {
    std::string samples;
    std::string k_policy = "observed+virtual";
    std::string out;
};

int run_score(const ScoreArgs& a) {
    std::ifstream in(a.samples);
    if (!in) {
        throw Error(ErrorCode::Io, "cannot open samples file " + a.samples);
    }
    auto policy = KPolicy::parse(a.k_policy);
    std::vector<std::string> order;
    std::map<std::string, std::vector<Sample>> groups;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            auto j = nlohmann::json::parse(line);
            auto id = j.value("question_id", std::string());
            Sample s;
            s.label = j.at("label").get<std::string>();
            s.confidence = j.at("confidence").get<double>();
            if (!groups.contains(id)) {
                order.push_back(id);
            }
            s.round = static_cast<int>(groups[id].size()) + 1;
            groups[id].push_back(std::move(s));
        } catch (const nlohmann::json::exception& ex) {
            throw Error(ErrorCode::Parse, a.samples + ":" + std::to_string(line_no) + ": " + ex.what());
        }
    }
    if (order.empty()) {
        throw Error(ErrorCode::EmptyInput, "no samples in " + a.samples);
    }

    Output out(a.out);
    csv::write_row(out.stream(), {"question_id", "candidate", "log_unnormalized", "mass", "top"});
    for (const auto& id : order) {
        auto posterior = score(groups[id], CandidateSet(policy));
        auto best = top(posterior);
        for (const auto& c : posterior.candidates) {
            csv::write_row(out.stream(), {id, c.label, csv::format_double(c.log_unnormalized),
                                          csv::format_double(c.mass), c.label == best.label ? "1" : "0"});
        }
        if (posterior.virtual_count > 0) {
            csv::write_row(out.stream(), {id, "<unlabeled>", csv::format_double(posterior.virtual_log_unnormalized),
                                          csv::format_double(posterior.virtual_mass), "0"});
        }
    }
    return 0;
}

// ---------------------------------------------------------------- run / sweep / replay

struct SourceArgs {
    std::string dataset;
    std::string methods = "sc,esc,cges";
    double gamma = 0.95;
    std::string gamma_grid;
    int budget = 16;
    int window = 4;
    std::string estimator = "lns-arith";
    std::string k_policy = "observed+virtual";
    std::string seeds = "0,1,2";
    std::string endpoint_config;
    std::string record;
    std::string replay;
    int parallel = 0;
    std::string out;
    std::string summary;
};

struct Source {
    ExperimentSpec spec;
    std::map<std::uint64_t, std::unique_ptr<RecordStore>> stores;
    std::optional<EndpointConfig> endpoint;
};

std::unique_ptr<Source> build_source(const SourceArgs& a, const std::vector<Method>& methods) {
    auto src = std::make_unique<Source>();
    auto& spec = src->spec;
    spec.questions = load_dataset(a.dataset);
    spec.seeds = parse_ints<std::uint64_t>(a.seeds);
    spec.estimator.estimator = parse_estimator(a.estimator);

    if (a.replay.empty() == a.endpoint_config.empty()) {
        throw Error(ErrorCode::Configuration, "give exactly one of --replay or --endpoint-config");
    }
    if (!a.replay.empty() && !a.record.empty()) {
        throw Error(ErrorCode::Configuration, "--record applies only to live runs");
    }

    int parallel = a.parallel;
    if (!a.endpoint_config.empty()) {
        src->endpoint = EndpointConfig::load(a.endpoint_config);
        if (parallel == 0) {
            parallel = src->endpoint->max_parallel;
        }
    }
    if (parallel == 0) {
        parallel = 1;
    }

    for (auto m : methods) {
        ControllerConfig c;
        c.method = m;
        c.gamma = a.gamma;
        c.budget = a.budget;
        c.esc_window = a.window;
        c.k_policy = KPolicy::parse(a.k_policy);
        c.max_parallel = parallel;
        c.validate();
        spec.methods.push_back(c);
    }

    // Stores are opened up front so that file errors surface before any sampling.
    for (auto seed : spec.seeds) {
        if (!a.replay.empty()) {
            auto path = with_seed(a.replay, seed);
            if (!src->stores.contains(seed)) {
                src->stores[seed] = RecordStore::open_replay(path);
            }
        } else if (!a.record.empty()) {
            src->stores[seed] = RecordStore::open_record(with_seed(a.record, seed));
        }
    }
    if (!a.record.empty() && spec.seeds.size() > 1 && a.record.find("{seed}") == std::string::npos) {
        throw Error(ErrorCode::Configuration, "recording several seeds needs a {seed} placeholder in --record");
    }

    Source* raw = src.get();
    spec.source = [raw, replay = !a.replay.empty()](std::uint64_t seed) -> Sampler {
        auto it = raw->stores.find(seed);
        RecordStore* store = it == raw->stores.end() ? nullptr : it->second.get();
        if (replay) {
            return replay_sampler(*store, raw->spec.estimator);
        }
        return live_sampler(*raw->endpoint, raw->spec.estimator, seed, store);
    };
    return src;
}

std::vector<Method> parse_methods(const std::string& text) {
    std::vector<Method> out;
    for (const auto& name : split_list(text)) {
        out.push_back(parse_method(name));
    }
    if (out.empty()) {
        throw Error(ErrorCode::Configuration, "no methods given");
    }
    return out;
}

int run_run(const SourceArgs& a) {
    auto src = build_source(a, parse_methods(a.methods));
    if (!a.gamma_grid.empty()) {
        src->spec.gamma_grid = parse_doubles(a.gamma_grid);
    }
    auto report = compare_methods(src->spec);
    {
        Output out(a.out);
        write_comparison_csv(out.stream(), report);
    }
    if (!a.summary.empty()) {
        Output summary(a.summary);
        write_summary(summary.stream(), report);
    } else if (!a.out.empty() && a.out != "-") {
        write_summary(std::cout, report);
    }
    return 0;
}

int run_sweep(const SourceArgs& a) {
    auto src = build_source(a, {Method::CGES, Method::SC});
    src->spec.gamma_grid = a.gamma_grid.empty() ? default_gamma_grid() : parse_doubles(a.gamma_grid);
    if (src->spec.gamma_grid.empty()) {
        std::cerr << "warning: empty gamma grid; writing an empty curve\n";
    }
    auto curve = sweep_gamma(src->spec);
    {
        Output out(a.out);
        write_curve_csv(out.stream(), curve);
    }
    if (!curve.empty() && !a.out.empty() && a.out != "-") {
        ExperimentSpec sc_only = src->spec;
        sc_only.methods = {src->spec.methods[1]};
        sc_only.gamma_grid.clear();
        auto sc = compare_methods(sc_only).rows.front();
        auto points = select_operating_points(curve, sc.accuracy);
        std::cout << "SC (B=" << a.budget << "): accuracy " << csv::format_double(sc.accuracy) << "\n"
                  << "efficient:    gamma " << csv::format_double(points.efficient.gamma) << ", calls "
                  << csv::format_double(points.efficient.avg_calls) << ", accuracy "
                  << csv::format_double(points.efficient.accuracy) << "\n"
                  << "conservative: gamma " << csv::format_double(points.conservative.gamma) << ", calls "
                  << csv::format_double(points.conservative.avg_calls) << ", accuracy "
                  << csv::format_double(points.conservative.accuracy)
                  << (points.matches_sc ? "" : " (SC accuracy not reached)") << "\n";
    }
    return 0;
}

int run_replay(const SourceArgs& a) {
    if (a.replay.empty()) {
        throw Error(ErrorCode::Configuration, "replay needs --replay <store>");
    }
    auto methods = parse_methods(a.methods);
    if (methods.size() != 1) {
        throw Error(ErrorCode::Configuration, "replay runs exactly one --method");
    }
    auto src = build_source(a, methods);
    auto seed = src->spec.seeds.front();
    auto result = run_method(src->spec.questions, src->spec.source(seed), src->spec.methods.front());
    Output out(a.out);
    write_predictions_csv(out.stream(), result);
    return 0;
}

void add_source_options(CLI::App* cmd, SourceArgs& a, bool with_methods) {
    cmd->add_option("--dataset", a.dataset, "Questions JSONL (id, prompt, gold, format)")->required();
    if (with_methods) {
        cmd->add_option("--method", a.methods, "Comma-separated methods: sc, esc, cges");
    }
    cmd->add_option("--gamma", a.gamma, "CGES stopping threshold");
    cmd->add_option("--budget", a.budget, "Maximum calls per question");
    cmd->add_option("--window", a.window, "ESC window size");
    cmd->add_option("--estimator", a.estimator, "Confidence estimator: lns-arith, lns-geo, mars, rm");
    cmd->add_option("--k-policy", a.k_policy, "fixed:K or observed+virtual");
    cmd->add_option("--seeds", a.seeds, "Comma-separated seeds");
    cmd->add_option("--endpoint-config", a.endpoint_config, "Endpoint JSON config for live sampling");
    cmd->add_option("--record", a.record, "Record store to append to ({seed} expands per seed)");
    cmd->add_option("--replay", a.replay, "Record store to replay ({seed} expands per seed)");
    cmd->add_option("--parallel", a.parallel, "Concurrent sampler calls per round");
    cmd->add_option("--out", a.out, "Output CSV path (default stdout)");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Confidence-guided early stopping: aggregation, stopping, baselines and simulation"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "Posterior concentration experiments on the generative model");
    simulate->add_option("--regime", sim.regime, "ideal or realistic");
    simulate->add_option("--k", sim.k, "Number of candidates K");
    simulate->add_option("--confidence-law", sim.confidence_law, "Ideal regime: point:c | uniform:lo,hi | beta:a,b");
    simulate->add_option("--answer-law", sim.answer_law, "Realistic regime: point:p1,..,pK | dirichlet:a1,..,aK");
    simulate->add_option("--noise", sim.noise, "Realistic regime confidence: a confidence law, or gauss:sigma");
    simulate->add_option("--m-schedule", sim.m_schedule, "Comma-separated sample counts");
    simulate->add_option("--trials", sim.trials, "Independent trials per row");
    simulate->add_option("--seed", sim.seed, "Base seed");
    simulate->add_option("--n-mc", sim.n_mc, "Monte Carlo draws for drift when no closed form exists");
    simulate->add_option("--parallel", sim.parallel, "Worker threads");
    simulate->add_flag("--allow-uninformative", sim.allow_uninformative, "Permit point-mass(1/K) confidences");
    simulate->add_option("--out", sim.out, "Output CSV path (default stdout)");

    ScoreArgs sc;
    auto* score_cmd = app.add_subcommand("score", "Posterior over candidates for a JSONL of samples");
    score_cmd->add_option("--samples", sc.samples, "JSONL with label, confidence, optional question_id")->required();
    score_cmd->add_option("--k-policy", sc.k_policy, "fixed:K or observed+virtual");
    score_cmd->add_option("--out", sc.out, "Output CSV path (default stdout)");

    SourceArgs run_args;
    auto* run = app.add_subcommand("run", "Compare methods on a dataset");
    add_source_options(run, run_args, true);
    run->add_option("--gamma-grid", run_args.gamma_grid, "Also sweep CGES over these gammas");
    run->add_option("--summary", run_args.summary, "Plain-text summary path");

    SourceArgs sweep_args;
    auto* sweep = app.add_subcommand("sweep", "Accuracy vs calls over a gamma grid");
    add_source_options(sweep, sweep_args, false);
    sweep->add_option("--gamma-grid", sweep_args.gamma_grid, "Comma-separated gammas (default grid if omitted)");

    SourceArgs replay_args;
    replay_args.methods = "cges";
    replay_args.seeds = "0";
    auto* replay = app.add_subcommand("replay", "Re-execute one method from a record store");
    add_source_options(replay, replay_args, true);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*simulate) return run_simulate(sim);
        if (*score_cmd) return run_score(sc);
        if (*run) return run_run(run_args);
        if (*sweep) return run_sweep(sweep_args);
        if (*replay) return run_replay(replay_args);
    } catch (const cges::Error& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return 2;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return 2;
    }
    return 1;
}
