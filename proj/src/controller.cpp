#include "cges/controller.hpp"

#include "cges/error.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <exception>
#include <optional>

namespace cges {

std::string_view to_string(Method method) {
    switch (method) {
        case Method::CGES: return "cges";
        case Method::SC: return "sc";
        case Method::ESC: return "esc";
    }
    return "unknown";
}

Method parse_method(std::string_view name) {
    for (auto m : {Method::CGES, Method::SC, Method::ESC}) {
        if (to_string(m) == name) {
            return m;
        }
    }
    throw Error(ErrorCode::Configuration, "unknown method '" + std::string(name) + "'");
}

void ControllerConfig::validate() const {
    if (budget < 1) {
        throw Error(ErrorCode::Configuration, "budget must be at least 1");
    }
    if (!(gamma > 0.0 && gamma <= 1.0)) {
        throw Error(ErrorCode::Configuration, "gamma must lie in (0, 1]");
    }
    if (method == Method::ESC && (esc_window < 1 || esc_window > budget)) {
        throw Error(ErrorCode::Configuration, "ESC window must lie in [1, budget]");
    }
    if (max_parallel < 1) {
        throw Error(ErrorCode::Configuration, "max_parallel must be at least 1");
    }
    if (max_retries < 0) {
        throw Error(ErrorCode::Configuration, "max_retries must be non-negative");
    }
    if (k_policy.kind == KPolicyKind::FixedK && k_policy.k < 2) {
        throw Error(ErrorCode::Configuration, "fixed K must be at least 2");
    }
}

const QuestionOutcome& RunResult::outcome(std::string_view question_id) const {
    for (const auto& o : outcomes) {
        if (o.question_id == question_id) {
            return o;
        }
    }
    throw Error(ErrorCode::KeyMismatch, "no outcome for question '" + std::string(question_id) + "'");
}

std::string majority_vote(std::span<const Sample> samples) {
    if (samples.empty()) {
        throw Error(ErrorCode::EmptyInput, "majority vote over no samples");
    }
    std::vector<std::pair<std::string, int>> counts;
    for (const auto& s : samples) {
        auto it = std::find_if(counts.begin(), counts.end(),
                               [&](const auto& c) { return c.first == s.label; });
        if (it == counts.end()) {
            counts.emplace_back(s.label, 1);
        } else {
            ++it->second;
        }
    }
    const auto* best = &counts.front();
    for (const auto& c : counts) {
        if (c.second > best->second) {
            best = &c;
        }
    }
    return best->first;
}

namespace {

struct QuestionSlot {
    const Question* question = nullptr;
    ScoreAccumulator scores;
    std::vector<Sample> samples;
    bool active = true;
};

bool retriable(const std::exception_ptr& e) {
    try {
        std::rethrow_exception(e);
    } catch (const Error&) {
        return false;
    } catch (...) {
        return true;
    }
}

Sample draw_one(const Sampler& sampler, const Question& q, int round, int max_retries) {
    std::string last_error;
    for (int attempt = 0; attempt <= max_retries; ++attempt) {
        try {
            Sample s = sampler(q, round);
            s.round = round;
            return s;
        } catch (const std::exception& ex) {
            if (!retriable(std::current_exception())) {
                throw;
            }
            last_error = ex.what();
        }
    }
    throw Error(ErrorCode::SamplerFailure,
                "question '" + q.id + "' round " + std::to_string(round) + " failed after " +
                    std::to_string(max_retries + 1) + " attempts: " + last_error);
}

std::vector<QuestionSlot> make_slots(std::span<const Question> questions, const ControllerConfig& config) {
    if (questions.empty()) {
        throw Error(ErrorCode::EmptyInput, "no questions to run");
    }
    std::vector<QuestionSlot> slots;
    slots.reserve(questions.size());
    for (const auto& q : questions) {
        slots.push_back({&q, ScoreAccumulator(CandidateSet(config.k_policy)), {}, true});
    }
    return slots;
}

// Draws `count` consecutive rounds for every slot in `indices`.
void draw(std::vector<QuestionSlot>& slots, const std::vector<std::size_t>& indices,
          const Sampler& sampler, int count, const ControllerConfig& config) {
    detail::parallel_for(indices.size(), config.max_parallel, [&](std::size_t j) {
        auto& slot = slots[indices[j]];
        for (int c = 0; c < count; ++c) {
            int round = static_cast<int>(slot.samples.size()) + 1;
            Sample s = draw_one(sampler, *slot.question, round, config.max_retries);
            try {
                slot.scores.add(s);
            } catch (const Error& ex) {
                throw Error(ex.code(), "question '" + slot.question->id + "': " + ex.what());
            }
            slot.samples.push_back(std::move(s));
        }
    });
}

std::vector<std::size_t> active_indices(const std::vector<QuestionSlot>& slots) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i].active) {
            out.push_back(i);
        }
    }
    return out;
}

template <typename Predict>
RunResult finish(std::vector<QuestionSlot>& slots, Predict&& predict) {
    RunResult result;
    result.outcomes.reserve(slots.size());
    for (auto& slot : slots) {
        QuestionOutcome o;
        o.question_id = slot.question->id;
        o.calls = static_cast<int>(slot.samples.size());
        o.posterior = slot.scores.posterior();
        auto [prediction, resolved] = predict(slot, o.posterior);
        o.prediction = std::move(prediction);
        o.resolved = resolved;
        o.samples = std::move(slot.samples);
        result.total_calls += o.calls;
        result.outcomes.push_back(std::move(o));
    }
    result.avg_calls = static_cast<double>(result.total_calls) / static_cast<double>(slots.size());
    return result;
}

} // namespace

RunResult cges_run(std::span<const Question> questions, const Sampler& sampler,
                   const ControllerConfig& config) {
    config.validate();
    auto slots = make_slots(questions, config);

    draw(slots, active_indices(slots), sampler, 1, config);
    for (int t = 2; t <= config.budget; ++t) {
        // A question stays unresolved while its top mass is strictly below gamma.
        for (auto& slot : slots) {
            if (slot.active && top(slot.scores.posterior()).mass >= config.gamma) {
                slot.active = false;
            }
        }
        auto remaining = active_indices(slots);
        if (remaining.empty()) {
            break;
        }
        draw(slots, remaining, sampler, 1, config);
    }

    return finish(slots, [&](const QuestionSlot&, const PosteriorVector& posterior) {
        auto best = top(posterior);
        return std::pair{best.label, best.mass >= config.gamma};
    });
}

RunResult sc_run(std::span<const Question> questions, const Sampler& sampler,
                 const ControllerConfig& config) {
    config.validate();
    auto slots = make_slots(questions, config);
    draw(slots, active_indices(slots), sampler, config.budget, config);
    return finish(slots, [](const QuestionSlot& slot, const PosteriorVector&) {
        return std::pair{majority_vote(slot.samples), true};
    });
}

RunResult esc_run(std::span<const Question> questions, const Sampler& sampler,
                  const ControllerConfig& config) {
    ControllerConfig esc = config;
    esc.method = Method::ESC;
    esc.validate();
    auto slots = make_slots(questions, esc);

    for (;;) {
        auto remaining = active_indices(slots);
        if (remaining.empty()) {
            break;
        }
        // Every active question has drawn the same number of samples so far.
        int drawn = static_cast<int>(slots[remaining.front()].samples.size());
        int count = std::min(esc.esc_window, esc.budget - drawn);
        draw(slots, remaining, sampler, count, esc);
        for (auto i : remaining) {
            auto& slot = slots[i];
            auto window = std::span(slot.samples).last(static_cast<std::size_t>(count));
            bool agree = count == esc.esc_window &&
                         std::all_of(window.begin(), window.end(),
                                     [&](const Sample& s) { return s.label == window.front().label; });
            if (agree || static_cast<int>(slot.samples.size()) >= esc.budget) {
                slot.active = false;
            }
        }
    }

    return finish(slots, [](const QuestionSlot& slot, const PosteriorVector&) {
        return std::pair{majority_vote(slot.samples), true};
    });
}

RunResult run_method(std::span<const Question> questions, const Sampler& sampler,
                     const ControllerConfig& config) {
    switch (config.method) {
        case Method::CGES: return cges_run(questions, sampler, config);
        case Method::SC: return sc_run(questions, sampler, config);
        case Method::ESC: return esc_run(questions, sampler, config);
    }
    throw Error(ErrorCode::Configuration, "unhandled method");
}

} // namespace cges
